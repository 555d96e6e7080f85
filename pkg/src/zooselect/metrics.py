"""Ground-truth oracle table and ranking metrics.

The oracle exhaustively evaluates every (task, model) pair with the
real black-box accuracy — the brute-force reference every retrieval
claim is checked against.  Metrics: top-k hitting ratio against the
oracle argmax (tie-tolerant), mean oracle accuracy of the picked model,
and per-task Pearson/Spearman between retrieval scores and oracle
accuracies.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstantInputError
from .zoo import QueryTask, Zoo, evaluate_accuracy, head_finetune_accuracy

ORACLE_MODES = ("direct", "head_finetune")


@dataclass
class OracleTable:
    """accuracy[task][model] for a fixed task list and zoo."""

    accuracies: np.ndarray          # (T, M) floats in [0, 1]
    task_digests: list[str]
    model_ids: list[str]
    mode: str

    def __post_init__(self):
        self.accuracies = np.asarray(self.accuracies, dtype=np.float64)
        t, m = len(self.task_digests), len(self.model_ids)
        if self.accuracies.shape != (t, m):
            raise ValueError(f"oracle table shape {self.accuracies.shape}, "
                             f"expected ({t}, {m})")
        if not np.isfinite(self.accuracies).all():
            raise ValueError("oracle table has non-finite entries")
        if self.accuracies.min() < 0.0 or self.accuracies.max() > 1.0:
            raise ValueError("oracle accuracies must lie in [0, 1]")
        if self.mode not in ORACLE_MODES:
            raise ValueError(f"oracle mode {self.mode!r} not in {ORACLE_MODES}")

    @property
    def task_count(self) -> int:
        return self.accuracies.shape[0]

    @property
    def model_count(self) -> int:
        return self.accuracies.shape[1]

    def best_models(self, task_index: int) -> set[str]:
        """All models tied at the row maximum; any of them counts as correct."""
        row = self.accuracies[task_index]
        return {self.model_ids[j] for j in np.flatnonzero(row == row.max())}


def build_oracle(tasks: list[QueryTask], zoo: Zoo, mode: str = "direct") -> OracleTable:
    """Exhaustive (task, model) evaluation; ``head_finetune`` refits the
    classification layer per pair before measuring."""
    if mode not in ORACLE_MODES:
        raise ValueError(f"oracle mode {mode!r} not in {ORACLE_MODES}")
    if not tasks:
        raise ValueError("cannot build an oracle over zero tasks")
    rows = np.zeros((len(tasks), zoo.size))
    for t, task in enumerate(tasks):
        for j, model in enumerate(zoo.models):
            if mode == "direct":
                rows[t, j] = evaluate_accuracy(model, task)
            else:
                rows[t, j] = head_finetune_accuracy(model, task)
    return OracleTable(accuracies=rows, task_digests=[t.task_id for t in tasks],
                       model_ids=list(zoo.model_ids), mode=mode)


# ---------------------------------------------------------------------------
# ranking metrics

Ranking = list[tuple[str, float]]


def recall_at_k(rankings: list[Ranking], oracle: OracleTable, k: int) -> float:
    """Fraction of tasks whose oracle-best model appears in the top k."""
    if not 1 <= k <= oracle.model_count:
        raise ValueError(f"k must be in [1, {oracle.model_count}], got {k}")
    if len(rankings) != oracle.task_count:
        raise ValueError(f"{len(rankings)} rankings for {oracle.task_count} oracle tasks")
    hits = 0
    for t, ranking in enumerate(rankings):
        if len(ranking) < k:
            raise ValueError(f"ranking {t} has only {len(ranking)} entries, need {k}")
        top = {model_id for model_id, _ in ranking[:k]}
        hits += bool(top & oracle.best_models(t))
    return hits / len(rankings)


def pearson(x, y) -> float:
    """Sample correlation coefficient; constant input is an error, not NaN."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two equal-length 1-d score vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError(f"correlation needs at least 2 points, got {len(x)}")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = float(np.sqrt(dx @ dx)), float(np.sqrt(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ConstantInputError(
            "correlation undefined for a constant input "
            f"(x spread {sx:.3g}, y spread {sy:.3g})")
    return float((dx @ dy) / (sx * sy))


def _mid_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j < len(x) and sorted_x[j] == sorted_x[i]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0
        i = j
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of mid-rank transforms."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two equal-length 1-d score vectors, got {x.shape} and {y.shape}")
    return pearson(_mid_ranks(x), _mid_ranks(y))


# ---------------------------------------------------------------------------
# summary


@dataclass
class MetricSummary:
    r_at_1: float
    r_at_3: float
    v_acc: float                    # mean oracle accuracy of the picked model
    pearson_mean: float
    spearman_mean: float
    pearson_per_task: list[float] = field(repr=False)
    spearman_per_task: list[float] = field(repr=False)
    task_count: int = 0
    model_count: int = 0
    runtime_seconds: float = 0.0

    def __post_init__(self):
        if self.r_at_1 > self.r_at_3 + 1e-12:
            raise ValueError(f"R@1 {self.r_at_1} cannot exceed R@3 {self.r_at_3}")
        for r in self.pearson_per_task + self.spearman_per_task:
            if not -1.0 - 1e-9 <= r <= 1.0 + 1e-9:
                raise ValueError(f"correlation {r} outside [-1, 1]")

    def to_dict(self) -> dict:
        return {
            "r_at_1": self.r_at_1, "r_at_3": self.r_at_3, "v_acc": self.v_acc,
            "pearson_mean": self.pearson_mean, "spearman_mean": self.spearman_mean,
            "pearson_per_task": self.pearson_per_task,
            "spearman_per_task": self.spearman_per_task,
            "task_count": self.task_count, "model_count": self.model_count,
            "runtime_seconds": self.runtime_seconds,
        }


def summarize(rankings: list[Ranking], oracle: OracleTable,
              runtime_seconds: float = 0.0) -> MetricSummary:
    """All headline metrics from full rankings plus the oracle table.

    Every ranking must cover the whole zoo: correlations pair each
    model's retrieval score (negated distance) with its oracle accuracy.
    """
    if len(rankings) != oracle.task_count:
        raise ValueError(f"{len(rankings)} rankings for {oracle.task_count} oracle tasks")
    m = oracle.model_count
    col = {model_id: j for j, model_id in enumerate(oracle.model_ids)}
    pearsons, spearmans, picked_acc = [], [], []
    for t, ranking in enumerate(rankings):
        if sorted(model_id for model_id, _ in ranking) != sorted(oracle.model_ids):
            raise ValueError(f"ranking {t} does not cover the zoo exactly once")
        scores = np.zeros(m)
        for model_id, dis in ranking:
            scores[col[model_id]] = -dis
        row = oracle.accuracies[t]
        pearsons.append(pearson(scores, row))
        spearmans.append(spearman(scores, row))
        picked_acc.append(row[col[ranking[0][0]]])
    r3 = recall_at_k(rankings, oracle, min(3, m))
    return MetricSummary(
        r_at_1=recall_at_k(rankings, oracle, 1), r_at_3=r3,
        v_acc=float(np.mean(picked_acc)),
        pearson_mean=float(np.mean(pearsons)), spearman_mean=float(np.mean(spearmans)),
        pearson_per_task=pearsons, spearman_per_task=spearmans,
        task_count=oracle.task_count, model_count=m,
        runtime_seconds=runtime_seconds)


def format_summary_table(summary: MetricSummary) -> str:
    """Plain-text aligned table for humans."""
    rows = [
        ("R@1", f"{summary.r_at_1:.4f}"),
        ("R@3", f"{summary.r_at_3:.4f}"),
        ("picked-model accuracy", f"{summary.v_acc:.4f}"),
        ("mean Pearson", f"{summary.pearson_mean:.4f}"),
        ("mean Spearman", f"{summary.spearman_mean:.4f}"),
        ("tasks x models", f"{summary.task_count} x {summary.model_count}"),
        ("runtime (s)", f"{summary.runtime_seconds:.1f}"),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)
