"""Black-box probing: anchors, boundary samples, and knowledge graph sets.

Everything here sees a classifier only through three attributes:
``model_id``, ``category_count`` and ``predict_proba``.  The probe walks
segments between confidently-classified pool samples to pin down points
where the model is torn between two categories; the displacement from
each anchor to each such boundary point is the raw material the encoders
consume.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import (BoundaryNonConvergenceError, DimensionError,
                     ProbePoolUnsuitableError)
from .nncore import read_with_header, write_with_header

CONFIDENCE_DEFAULT = 0.9
GAP_EPSILON = 1e-3
MAX_BISECTIONS = 60
RETRY_PAIRS = 5
ARTIFACT_VERSION = 1


class BlackBoxClassifier(Protocol):
    """The entire surface a probe may touch."""

    model_id: str

    @property
    def category_count(self) -> int: ...

    def predict_proba(self, x: np.ndarray) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# pools and anchors


@dataclass
class ProbePool:
    """Samples used to interrogate models, with provenance."""

    samples: np.ndarray
    pool_id: str
    source: str  # "external" or "train:<model_id>"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] == 0:
            raise DimensionError(f"pool needs a non-empty (n, d) matrix, got {self.samples.shape}")


@dataclass(frozen=True)
class ClassAnchor:
    category: int
    sample: np.ndarray
    confidence: float


def rank_anchor_candidates(model: BlackBoxClassifier, pool: ProbePool,
                           tau: float = CONFIDENCE_DEFAULT) -> dict[int, list[ClassAnchor]]:
    """Qualifying pool samples per category, most confident first.

    A sample qualifies for category a when the model both predicts a and
    does so with probability at least tau.  Ties break toward the lower
    pool index so the ranking is reproducible.
    """
    probs = model.predict_proba(pool.samples)
    predicted = probs.argmax(axis=1)
    ranked: dict[int, list[ClassAnchor]] = {}
    for cat in range(model.category_count):
        idx = np.flatnonzero((predicted == cat) & (probs[:, cat] >= tau))
        order = idx[np.argsort(-probs[idx, cat], kind="stable")]
        if len(order):
            ranked[cat] = [ClassAnchor(cat, pool.samples[i].copy(), float(probs[i, cat]))
                           for i in order]
    if not ranked:
        raise ProbePoolUnsuitableError(
            f"pool {pool.pool_id} covers no category of model {model.model_id} at tau={tau}")
    return ranked


def select_anchors(model: BlackBoxClassifier, pool: ProbePool,
                   tau: float = CONFIDENCE_DEFAULT) -> tuple[dict[int, ClassAnchor], list[int]]:
    """Single most-confident anchor per covered category, plus the uncovered list."""
    ranked = rank_anchor_candidates(model, pool, tau)
    anchors = {cat: cands[0] for cat, cands in ranked.items()}
    uncovered = [c for c in range(model.category_count) if c not in anchors]
    return anchors, uncovered


# ---------------------------------------------------------------------------
# boundary bisection


@dataclass(frozen=True)
class BoundarySample:
    origin: int
    target: int
    sample: np.ndarray
    gap: float
    iterations: int


@dataclass(frozen=True)
class BoundaryFailure:
    """A third category took over the segment; the caller should re-pair."""

    origin: int
    target: int
    interposer: int


def find_boundary_sample(model: BlackBoxClassifier, anchor_a: ClassAnchor,
                         anchor_b: ClassAnchor, epsilon: float = GAP_EPSILON,
                         max_iter: int = MAX_BISECTIONS) -> BoundarySample | BoundaryFailure:
    """Bisect the segment from anchor_a to anchor_b down to the a/b boundary.

    Keeps the bracket invariant (left end predicts a, right end predicts b)
    and stops at a midpoint where the two categories are the model's top
    two and their probabilities differ by at most epsilon.  A midpoint
    claimed by any other category aborts with a ``BoundaryFailure`` naming
    it; running out of iterations raises, carrying the best gap seen.
    """
    a, b = anchor_a.category, anchor_b.category
    if a == b:
        raise ValueError(f"anchors must belong to different categories, both are {a}")
    left, right = anchor_a.sample, anchor_b.sample
    for end, cat in ((left, a), (right, b)):
        pred = int(np.argmax(model.predict_proba(end)))
        if pred != cat:
            raise ValueError(
                f"anchor for category {cat} is predicted as {pred}; not a valid bracket")
    lo, hi = 0.0, 1.0
    best_gap = np.inf
    for iteration in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        x = (1.0 - mid) * anchor_a.sample + mid * anchor_b.sample
        p = model.predict_proba(x)
        gap = abs(float(p[a] - p[b]))
        best_gap = min(best_gap, gap)
        top2 = set(np.argsort(p)[-2:].tolist())
        if gap <= epsilon and top2 == {a, b}:
            return BoundarySample(a, b, x, gap, iteration)
        winner = int(np.argmax(p))
        if winner == a:
            lo = mid
        elif winner == b:
            hi = mid
        else:
            return BoundaryFailure(a, b, winner)
    raise BoundaryNonConvergenceError(
        f"no boundary within {max_iter} bisections between categories {a} and {b} "
        f"(best gap {best_gap:.3e} > epsilon {epsilon:.0e})", best_gap=best_gap)


# ---------------------------------------------------------------------------
# perturbation matrix and graph sets


@dataclass
class PerturbationMatrix:
    """vectors[a, b] = boundary(a->b) - anchor(a); zero rows where absent."""

    category_count: int
    vectors: np.ndarray     # (k, k, d)
    present: np.ndarray     # (k, k) bool, diagonal False

    def masked_pairs(self) -> list[tuple[int, int]]:
        k = self.category_count
        return [(a, b) for a in range(k) for b in range(k)
                if a != b and not self.present[a, b]]


def build_perturbation_matrix(anchors: dict[int, ClassAnchor],
                              boundaries: dict[tuple[int, int], BoundarySample],
                              category_count: int, feature_dim: int) -> PerturbationMatrix:
    vectors = np.zeros((category_count, category_count, feature_dim))
    present = np.zeros((category_count, category_count), dtype=bool)
    for (a, b), boundary in boundaries.items():
        if a not in anchors:
            raise ValueError(f"boundary ({a}, {b}) has no anchor for its origin")
        if a == b or boundary.origin != a or boundary.target != b:
            raise ValueError(f"boundary labeled ({boundary.origin}, {boundary.target}) filed under ({a}, {b})")
        vectors[a, b] = boundary.sample - anchors[a].sample
        present[a, b] = True
    return PerturbationMatrix(category_count, vectors, present)


@dataclass
class Subgraph:
    """One covered category's star: its anchor plus boundary nodes.

    ``nodes[t]`` is the boundary sample toward category t, with the
    anchor itself sitting at index ``category``; positions whose boundary
    is absent repeat the anchor and are flagged in ``present``.
    """

    category: int
    anchor: np.ndarray
    nodes: np.ndarray       # (k, d)
    present: np.ndarray     # (k,) bool; position `category` is True

    @property
    def node_count(self) -> int:
        return int(self.present.sum())

    def edges(self) -> np.ndarray:
        """Displacements node - anchor; zero where the node is the anchor fill."""
        return self.nodes - self.anchor


@dataclass
class KnowledgeGraphSet:
    model_id: str
    pool_id: str
    category_count: int
    subgraphs: list[Subgraph] = field(repr=False)

    def covered_categories(self) -> list[int]:
        return [g.category for g in self.subgraphs]


def build_graph_set(anchors: dict[int, ClassAnchor],
                    boundaries: dict[tuple[int, int], BoundarySample],
                    category_count: int, model_id: str, pool_id: str) -> KnowledgeGraphSet:
    subgraphs = []
    for cat in sorted(anchors):
        anchor = anchors[cat].sample
        nodes = np.tile(anchor, (category_count, 1))
        present = np.zeros(category_count, dtype=bool)
        present[cat] = True
        for target in range(category_count):
            if target != cat and (cat, target) in boundaries:
                nodes[target] = boundaries[(cat, target)].sample
                present[target] = True
        subgraphs.append(Subgraph(cat, anchor.copy(), nodes, present))
    return KnowledgeGraphSet(model_id, pool_id, category_count, subgraphs)


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class ProbeReport:
    model_id: str
    pool_id: str
    covered: list[int]
    uncovered: list[int]
    masked_pairs: list[tuple[int, int]]
    mean_gap: float
    max_gap: float
    retried_pairs: int


@dataclass
class ProbeResult:
    anchors: dict[int, ClassAnchor]
    boundaries: dict[tuple[int, int], BoundarySample]
    matrix: PerturbationMatrix
    graph_set: KnowledgeGraphSet
    report: ProbeReport


def probe_model(model: BlackBoxClassifier, pool: ProbePool,
                tau: float = CONFIDENCE_DEFAULT, epsilon: float = GAP_EPSILON,
                max_iter: int = MAX_BISECTIONS, retry_pairs: int = RETRY_PAIRS) -> ProbeResult:
    """Anchor every category the pool covers, then bisect every ordered pair.

    When a segment fails (third category interposed, or no convergence)
    the pair is retried with up to ``retry_pairs`` alternative anchor
    combinations drawn from the next-most-confident candidates; pairs
    that still fail are masked out of the matrix and graph set.
    """
    ranked = rank_anchor_candidates(model, pool, tau)
    anchors = {cat: cands[0] for cat, cands in ranked.items()}
    covered = sorted(anchors)
    uncovered = [c for c in range(model.category_count) if c not in anchors]

    # Alternative (origin_rank, target_rank) combinations, nearest-best first.
    alternates = [(1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2)]
    boundaries: dict[tuple[int, int], BoundarySample] = {}
    retried = 0
    for a in covered:
        for b in covered:
            if a == b:
                continue
            attempts = [(0, 0)] + alternates[:retry_pairs]
            found = None
            for ra, rb in attempts:
                if ra >= len(ranked[a]) or rb >= len(ranked[b]):
                    continue
                if (ra, rb) != (0, 0):
                    retried += 1
                try:
                    outcome = find_boundary_sample(model, ranked[a][ra], ranked[b][rb],
                                                   epsilon=epsilon, max_iter=max_iter)
                except BoundaryNonConvergenceError:
                    continue
                if isinstance(outcome, BoundarySample):
                    found = outcome
                    break
            if found is not None:
                boundaries[(a, b)] = found

    feature_dim = pool.samples.shape[1]
    matrix = build_perturbation_matrix(anchors, boundaries, model.category_count, feature_dim)
    graph_set = build_graph_set(anchors, boundaries, model.category_count,
                                model.model_id, pool.pool_id)
    gaps = [s.gap for s in boundaries.values()]
    report = ProbeReport(
        model_id=model.model_id, pool_id=pool.pool_id, covered=covered,
        uncovered=uncovered, masked_pairs=matrix.masked_pairs(),
        mean_gap=float(np.mean(gaps)) if gaps else float("nan"),
        max_gap=float(np.max(gaps)) if gaps else float("nan"),
        retried_pairs=retried)
    return ProbeResult(anchors, boundaries, matrix, graph_set, report)


# ---------------------------------------------------------------------------
# persistence


def save_probe_artifact(path: str | Path, result: ProbeResult,
                        epsilon: float = GAP_EPSILON) -> None:
    """One file: JSON header with coverage, binary payload with the geometry."""
    report = result.report
    header = {
        "format_version": ARTIFACT_VERSION,
        "model_id": report.model_id,
        "pool_id": report.pool_id,
        "category_count": result.graph_set.category_count,
        "feature_dim": int(next(iter(result.anchors.values())).sample.shape[0]),
        "epsilon": epsilon,
        "covered": report.covered,
        "uncovered": report.uncovered,
        "masked_pairs": [list(p) for p in report.masked_pairs],
        "retried_pairs": report.retried_pairs,
    }
    arrays: dict[str, np.ndarray] = {}
    for cat, anchor in result.anchors.items():
        arrays[f"anchor.{cat}"] = anchor.sample
        arrays[f"anchor_conf.{cat}"] = np.array(anchor.confidence)
    for (a, b), boundary in result.boundaries.items():
        arrays[f"boundary.{a}.{b}"] = boundary.sample
        arrays[f"gap.{a}.{b}"] = np.array(boundary.gap)
        arrays[f"iterations.{a}.{b}"] = np.array(float(boundary.iterations))
    write_with_header(path, header, arrays)


def load_probe_artifact(path: str | Path) -> ProbeResult:
    header, arrays = read_with_header(path)
    k = int(header["category_count"])
    d = int(header["feature_dim"])
    anchors = {}
    for cat in header["covered"]:
        anchors[cat] = ClassAnchor(cat, arrays[f"anchor.{cat}"],
                                   float(arrays[f"anchor_conf.{cat}"]))
    boundaries = {}
    for name in arrays:
        if name.startswith("boundary."):
            _, a, b = name.split(".")
            a, b = int(a), int(b)
            boundaries[(a, b)] = BoundarySample(
                a, b, arrays[name], float(arrays[f"gap.{a}.{b}"]),
                int(arrays[f"iterations.{a}.{b}"]))
    matrix = build_perturbation_matrix(anchors, boundaries, k, d)
    graph_set = build_graph_set(anchors, boundaries, k, header["model_id"], header["pool_id"])
    report = ProbeReport(
        model_id=header["model_id"], pool_id=header["pool_id"],
        covered=list(header["covered"]), uncovered=list(header["uncovered"]),
        masked_pairs=[tuple(p) for p in header["masked_pairs"]],
        mean_gap=float(np.mean([s.gap for s in boundaries.values()])) if boundaries else float("nan"),
        max_gap=float(np.max([s.gap for s in boundaries.values()])) if boundaries else float("nan"),
        retried_pairs=int(header["retried_pairs"]))
    return ProbeResult(anchors, boundaries, matrix, graph_set, report)
