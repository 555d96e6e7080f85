"""Synthetic classifier zoo: domains, models, accuracy oracles, persistence.

Each zoo model owns a private classification domain (Gaussian clusters in
feature space) and a small softmax MLP trained on it.  Domains of
different models occupy disjoint slabs along the first feature axis, so
"which model fits this task" has an unambiguous answer.  Downstream
pipeline stages must treat models as black boxes: the only surface they
may touch is ``model_id``, ``category_count`` and ``predict_proba``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DigestMismatchError, DimensionError, LabelMappingError,
                     ManifestVersionError, MissingCheckpointError,
                     NonFiniteError, UnderTrainedError)
from .nncore import (AdamState, ParameterSet, Tensor, adam_step, backward,
                     dense_forward, derive_rng, load_checkpoint, read_with_header,
                     save_checkpoint, softmax, softmax_cross_entropy_batch,
                     write_with_header)

MANIFEST_VERSION = 1
TASK_FILE_VERSION = 1
MIN_CATEGORIES = 2
MAX_CATEGORIES = 10
# Centers are drawn from a unit box shifted by this much per model along
# axis 0, leaving at least a 2-unit gap between neighboring domains.
SLAB_WIDTH = 4.0

SPLITS = ("train", "validation", "query")


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class SyntheticDomainSpec:
    """Everything needed to regenerate one domain deterministically."""

    feature_dim: int
    category_count: int
    centers: tuple[tuple[float, ...], ...]       # (k, d)
    spreads: tuple[float, ...]                   # (k,)
    samples_per_category: dict[str, int]         # per split
    seed: int

    def __post_init__(self):
        if not MIN_CATEGORIES <= self.category_count <= MAX_CATEGORIES:
            raise ValueError(
                f"category_count {self.category_count} outside [{MIN_CATEGORIES}, {MAX_CATEGORIES}]")
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.shape != (self.category_count, self.feature_dim):
            raise DimensionError(
                f"centers shape {centers.shape} vs (k, d) = "
                f"({self.category_count}, {self.feature_dim})")
        if len(self.spreads) != self.category_count:
            raise DimensionError("one spread per category required")
        if any(s <= 0 for s in self.spreads):
            raise ValueError("cluster spreads must be positive")
        diffs = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diffs ** 2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if dist.min() == 0.0:
            raise ValueError("cluster centers must be pairwise distinct")
        if set(self.samples_per_category) != set(SPLITS):
            raise ValueError(f"samples_per_category must cover splits {SPLITS}")

    def digest(self) -> str:
        payload = {
            "feature_dim": self.feature_dim,
            "category_count": self.category_count,
            "centers": [[float(v) for v in row] for row in self.centers],
            "spreads": [float(s) for s in self.spreads],
            "samples_per_category": {k: int(v) for k, v in self.samples_per_category.items()},
            "seed": int(self.seed),
        }
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class DomainData:
    """Materialized samples, one (X, y) pair per split."""

    splits: dict[str, tuple[np.ndarray, np.ndarray]]

    def __getitem__(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        return self.splits[split]


def generate_domain(spec: SyntheticDomainSpec) -> DomainData:
    """Draw every split from its own RNG stream so splits stay disjoint."""
    centers = np.asarray(spec.centers, dtype=np.float64)
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for split in SPLITS:
        rng = derive_rng(spec.seed, "split", split)
        n = spec.samples_per_category[split]
        xs, ys = [], []
        for cat in range(spec.category_count):
            xs.append(centers[cat] + spec.spreads[cat] * rng.standard_normal((n, spec.feature_dim)))
            ys.append(np.full(n, cat, dtype=np.int64))
        out[split] = (np.concatenate(xs), np.concatenate(ys))
    return DomainData(out)


def make_domain_specs(size: int, feature_dim: int, categories: int, spread: float,
                      samples_per_category: dict[str, int], seed: int,
                      slab_width: float = SLAB_WIDTH) -> list[SyntheticDomainSpec]:
    """One spec per model, centers confined to that model's slab of the box.

    ``slab_width`` is the center-to-center offset between consecutive
    domains along the first axis: large values give disjoint domains,
    small ones make neighboring domains bleed into each other so model
    accuracy decays gradually with domain distance.
    """
    specs = []
    for i in range(size):
        rng = derive_rng(seed, "domain", i)
        centers = rng.uniform(-1.0, 1.0, size=(categories, feature_dim))
        centers[:, 0] += slab_width * i
        specs.append(SyntheticDomainSpec(
            feature_dim=feature_dim,
            category_count=categories,
            centers=tuple(tuple(float(v) for v in row) for row in centers),
            spreads=tuple(float(spread) for _ in range(categories)),
            samples_per_category=dict(samples_per_category),
            seed=derive_rng(seed, "domain-seed", i).integers(2 ** 31).item(),
        ))
    return specs


# ---------------------------------------------------------------------------
# models


class ZooModel:
    """A trained two-layer softmax classifier.

    Pipeline code may only call ``predict_proba``; the raw arrays exist
    for persistence and for zoo-side oracles (``head_finetune_accuracy``
    refits the output layer, which requires the frozen hidden layer).
    """

    def __init__(self, model_id: str, arrays: dict[str, np.ndarray],
                 val_acc: float, domain_digest: str):
        self.model_id = model_id
        self._w1 = np.asarray(arrays["hid.w"], dtype=np.float64)
        self._b1 = np.asarray(arrays["hid.b"], dtype=np.float64)
        self._w2 = np.asarray(arrays["out.w"], dtype=np.float64)
        self._b2 = np.asarray(arrays["out.b"], dtype=np.float64)
        self.val_acc = float(val_acc)
        self.domain_digest = domain_digest

    @property
    def feature_dim(self) -> int:
        return self._w1.shape[0]

    @property
    def category_count(self) -> int:
        return self._w2.shape[1]

    @property
    def hidden_width(self) -> int:
        return self._w1.shape[1]

    def hidden_features(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(np.atleast_2d(np.asarray(x, dtype=np.float64)) @ self._w1 + self._b1)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Softmax category probabilities; accepts one sample or a batch."""
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        if arr.shape[1] != self.feature_dim:
            raise DimensionError(
                f"model {self.model_id}: input shape {arr.shape} vs feature_dim {self.feature_dim}")
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"model {self.model_id}: non-finite probe input")
        probs = softmax(self.hidden_features(arr) @ self._w2 + self._b2)
        return probs[0] if single else probs

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"hid.w": self._w1, "hid.b": self._b1, "out.w": self._w2, "out.b": self._b2}


def _fit_softmax_mlp(x: np.ndarray, y: np.ndarray, hidden_width: int, k: int, seed: int,
                     learning_rate: float, epochs: int,
                     val: tuple[np.ndarray, np.ndarray] | None = None,
                     stop_acc: float = 1.0,
                     stop_confidence: float = 0.97) -> tuple[ParameterSet, float]:
    """Full-batch Adam on cross entropy; returns params and final val accuracy.

    Early stopping waits for both validation accuracy and mean top-class
    probability: an accurate-but-hesitant classifier keeps training so
    probed confidences resemble a properly converged model's.
    """
    d = x.shape[1]
    ps = ParameterSet(seed)
    ps.add_dense("hid", d, hidden_width)
    ps.add_dense("out", hidden_width, k)
    state = AdamState(ps, learning_rate=learning_rate)
    xt = Tensor(x)

    def val_metrics() -> tuple[float, float]:
        if val is None:
            return float("nan"), float("nan")
        logits = np.tanh(val[0] @ ps["hid.w"].data + ps["hid.b"].data) \
            @ ps["out.w"].data + ps["out.b"].data
        probs = softmax(logits)
        acc = float((logits.argmax(axis=1) == val[1]).mean())
        return acc, float(probs.max(axis=1).mean())

    acc = 0.0
    for epoch in range(epochs):
        hidden = dense_forward(xt, ps, "hid").tanh()
        loss = softmax_cross_entropy_batch(dense_forward(hidden, ps, "out"), y)
        backward(loss)
        adam_step(ps, state)
        if val is not None and (epoch + 1) % 10 == 0:
            acc, confidence = val_metrics()
            if acc >= stop_acc and confidence >= stop_confidence:
                break
    if val is not None:
        acc, _ = val_metrics()
    return ps, acc


def train_classifier(data: DomainData, spec: SyntheticDomainSpec, hidden_width: int,
                     min_val_acc: float, seed: int, learning_rate: float = 0.02,
                     max_epochs: int = 300) -> tuple[dict[str, np.ndarray], float]:
    """Fit one zoo classifier; refuse to hand back an under-trained one."""
    x, y = data["train"]
    ps, acc = _fit_softmax_mlp(x, y, hidden_width, spec.category_count, seed,
                               learning_rate, max_epochs, val=data["validation"],
                               stop_acc=max(min_val_acc, 0.98))
    if acc < min_val_acc:
        raise UnderTrainedError(
            f"validation accuracy {acc:.3f} below required {min_val_acc:.3f}", achieved=acc)
    return ps.to_arrays(), acc


# ---------------------------------------------------------------------------
# the zoo


@dataclass
class Zoo:
    zoo_id: str
    config: dict
    specs: list[SyntheticDomainSpec]
    models: list[ZooModel]
    data: list[DomainData] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.models)

    @property
    def model_ids(self) -> list[str]:
        return [m.model_id for m in self.models]

    def model_index(self, model_id: str) -> int:
        return self.model_ids.index(model_id)


DEFAULT_SAMPLES = {"train": 50, "validation": 25, "query": 40}


def build_zoo(size: int = 12, feature_dim: int = 32, categories: int = 4,
              hidden_width: int = 32, spread: float = 0.3,
              samples_per_category: dict[str, int] | None = None,
              min_val_acc: float = 0.9, seed: int = 0, retries: int = 3,
              learning_rate: float = 0.02, max_epochs: int = 300,
              slab_width: float = SLAB_WIDTH) -> Zoo:
    if size < 1:
        raise ValueError("zoo size must be at least 1")
    samples = dict(samples_per_category or DEFAULT_SAMPLES)
    config = {
        "size": size, "feature_dim": feature_dim, "categories": categories,
        "hidden_width": hidden_width, "spread": spread,
        "samples_per_category": samples, "min_val_acc": min_val_acc,
        "seed": seed, "retries": retries, "learning_rate": learning_rate,
        "max_epochs": max_epochs, "slab_width": slab_width,
    }
    specs = make_domain_specs(size, feature_dim, categories, spread, samples, seed,
                              slab_width=slab_width)
    models, data = [], []
    for i, spec in enumerate(specs):
        domain = generate_domain(spec)
        last_error: UnderTrainedError | None = None
        for attempt in range(retries):
            try:
                arrays, acc = train_classifier(
                    domain, spec, hidden_width, min_val_acc, seed=spec.seed + attempt,
                    learning_rate=learning_rate, max_epochs=max_epochs)
                break
            except UnderTrainedError as exc:
                last_error = exc
        else:
            raise UnderTrainedError(
                f"model {i} stayed under-trained after {retries} attempts "
                f"(best {last_error.achieved:.3f})", achieved=last_error.achieved)
        models.append(ZooModel(f"m{i:03d}", arrays, acc, spec.digest()))
        data.append(domain)
    zoo_digest = hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:8]
    return Zoo(zoo_id=f"zoo-{zoo_digest}", config=config, specs=specs,
               models=models, data=data)


# ---------------------------------------------------------------------------
# query tasks


@dataclass
class QueryTask:
    """Labeled samples standing in for "the task I need a model for".

    Labels are task-local category indices 0..k_T-1; every category must
    appear.  ``q_n`` records the per-category sample count used to build it.
    """

    samples: np.ndarray
    labels: np.ndarray
    q_n: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or self.samples.shape[0] == 0:
            raise ValueError(f"task needs a non-empty (n, d) sample matrix, got {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise DimensionError(
                f"labels shape {self.labels.shape} vs samples {self.samples.shape}")
        if not np.isfinite(self.samples).all():
            raise NonFiniteError("task samples contain NaN or Inf")
        present = np.unique(self.labels)
        k = int(self.labels.max()) + 1
        if self.labels.min() < 0 or len(present) != k:
            raise ValueError(f"labels must cover 0..k_T-1 contiguously, got {present.tolist()}")

    @property
    def category_count(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def feature_dim(self) -> int:
        return self.samples.shape[1]

    @property
    def task_id(self) -> str:
        h = hashlib.sha256()
        h.update(self.samples.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]


def _half_indices(labels: np.ndarray, category: int, half: str) -> np.ndarray:
    """Split a category's sample indices into disjoint episode/eval halves."""
    idx = np.flatnonzero(labels == category)
    mid = len(idx) // 2
    if half == "episode":
        return idx[:mid]
    if half == "eval":
        return idx[mid:]
    if half == "all":
        return idx
    raise ValueError(f"unknown half {half!r}")


def sample_task(domain: DomainData, q_n: int, rng: np.random.Generator,
                half: str = "eval", categories: list[int] | None = None) -> QueryTask:
    """Draw q_n query samples per category from the domain's query split."""
    x, y = domain["query"]
    cats = categories if categories is not None else sorted(np.unique(y).tolist())
    xs, ys = [], []
    for slot, cat in enumerate(cats):
        pool = _half_indices(y, cat, half)
        if len(pool) < q_n:
            raise ValueError(f"category {cat}: only {len(pool)} query samples for q_n={q_n}")
        pick = rng.choice(pool, size=q_n, replace=False)
        xs.append(x[pick])
        ys.append(np.full(q_n, slot, dtype=np.int64))
    return QueryTask(np.concatenate(xs), np.concatenate(ys), q_n)


def sample_mixed_task(domains: list[DomainData], slot_domains: list[int], q_n: int,
                      rng: np.random.Generator, half: str = "eval") -> QueryTask:
    """A task whose category slots come from different domains.

    Slot ``s`` draws q_n samples of category ``s`` from domain
    ``slot_domains[s]``, so under the identity label convention the
    domain owning slot ``s`` scores that slot correctly and others do not.
    """
    xs, ys = [], []
    for slot, dom in enumerate(slot_domains):
        x, y = domains[dom]["query"]
        pool = _half_indices(y, slot, half)
        if len(pool) < q_n:
            raise ValueError(f"domain {dom} category {slot}: too few samples for q_n={q_n}")
        pick = rng.choice(pool, size=q_n, replace=False)
        xs.append(x[pick])
        ys.append(np.full(q_n, slot, dtype=np.int64))
    return QueryTask(np.concatenate(xs), np.concatenate(ys), q_n)


# ---------------------------------------------------------------------------
# accuracy oracles


def evaluate_accuracy(model: ZooModel, task: QueryTask,
                      label_map: list[int] | None = None) -> float:
    """Fraction of task samples the model classifies to the mapped label.

    With no explicit map, task label j corresponds to model category j;
    tasks with more categories than the model cannot be mapped.
    """
    if task.samples.shape[0] == 0:
        raise ValueError("cannot evaluate an empty task")
    mapped = task.labels if label_map is None else np.asarray(label_map, dtype=np.int64)[task.labels]
    if mapped.max() >= model.category_count or mapped.min() < 0:
        raise LabelMappingError(
            f"task {task.task_id} label {int(mapped.max())} outside model "
            f"{model.model_id} range [0, {model.category_count})")
    preds = model.predict_proba(task.samples).argmax(axis=1)
    return float((preds == mapped).mean())


def head_finetune_accuracy(model: ZooModel, task: QueryTask, split_ratio: float = 0.5,
                           seed: int = 0, learning_rate: float = 0.05,
                           epochs: int = 200) -> float:
    """Refit only the output layer on part of the task, score the rest.

    The hidden layer stays frozen bit-for-bit; only a fresh softmax head
    of size (hidden_width, k_T) is trained on the fit half.
    """
    if not 0.0 < split_ratio < 1.0:
        raise ValueError(f"split_ratio must be in (0, 1), got {split_ratio}")
    k_t = task.category_count
    rng = derive_rng(seed, "head-finetune", model.model_id, task.task_id)
    fit_idx, eval_idx = [], []
    for cat in range(k_t):
        idx = np.flatnonzero(task.labels == cat)
        if len(idx) < 2:
            raise ValueError(f"category {cat} needs at least 2 samples to split")
        idx = rng.permutation(idx)
        cut = max(1, min(len(idx) - 1, int(round(split_ratio * len(idx)))))
        fit_idx.append(idx[:cut])
        eval_idx.append(idx[cut:])
    fit_idx = np.concatenate(fit_idx)
    eval_idx = np.concatenate(eval_idx)

    feats_fit = model.hidden_features(task.samples[fit_idx])
    ps = _fit_head(feats_fit, task.labels[fit_idx], k_t, seed, learning_rate, epochs)
    feats_eval = model.hidden_features(task.samples[eval_idx])
    logits = feats_eval @ ps["head.w"].data + ps["head.b"].data
    return float((logits.argmax(axis=1) == task.labels[eval_idx]).mean())


def _fit_head(features: np.ndarray, labels: np.ndarray, k: int, seed: int,
              learning_rate: float, epochs: int) -> ParameterSet:
    ps = ParameterSet(derive_rng(seed, "head").integers(2 ** 31).item())
    ps.add_dense("head", features.shape[1], k)
    state = AdamState(ps, learning_rate=learning_rate)
    ft = Tensor(features)
    for _ in range(epochs):
        loss = softmax_cross_entropy_batch(dense_forward(ft, ps, "head"), labels)
        backward(loss)
        adam_step(ps, state)
    return ps


# ---------------------------------------------------------------------------
# probe sample sources


def external_pool_samples(zoo: Zoo, per_domain: int, seed: int) -> np.ndarray:
    """Fresh draws near every domain, disjoint from all stored splits.

    The pool is shared by all models: the same samples probe each one.
    """
    rows = []
    for i, spec in enumerate(zoo.specs):
        rng = derive_rng(seed, "external-pool", i)
        centers = np.asarray(spec.centers)
        per_cat = max(1, per_domain // spec.category_count)
        for cat in range(spec.category_count):
            rows.append(centers[cat] + spec.spreads[cat]
                        * rng.standard_normal((per_cat, spec.feature_dim)))
    return np.concatenate(rows)


def train_pool_samples(zoo: Zoo, model_index: int) -> np.ndarray:
    """The model's own training samples, used for probe-source comparisons."""
    x, _ = zoo.data[model_index]["train"]
    return x.copy()


# ---------------------------------------------------------------------------
# persistence


def save_zoo(zoo: Zoo, directory: str | Path) -> Path:
    directory = Path(directory)
    (directory / "models").mkdir(parents=True, exist_ok=True)
    entries = []
    for model in zoo.models:
        rel = f"models/{model.model_id}.k2v"
        save_checkpoint(directory / rel, model.to_arrays())
        entries.append({
            "model_id": model.model_id,
            "checkpoint": rel,
            "k": model.category_count,
            "d": model.feature_dim,
            "val_acc": model.val_acc,
            "domain_digest": model.domain_digest,
        })
    manifest = {
        "zoo_id": zoo.zoo_id,
        "format_version": MANIFEST_VERSION,
        "config": zoo.config,
        "models": entries,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_zoo(directory: str | Path) -> Zoo:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    version = manifest.get("format_version")
    if version != MANIFEST_VERSION:
        raise ManifestVersionError(
            f"manifest format_version {version!r}, this build reads {MANIFEST_VERSION}")
    config = manifest["config"]
    specs = make_domain_specs(config["size"], config["feature_dim"], config["categories"],
                              config["spread"], config["samples_per_category"], config["seed"],
                              slab_width=config.get("slab_width", SLAB_WIDTH))
    models, data = [], []
    for entry, spec in zip(manifest["models"], specs):
        digest = spec.digest()
        if digest != entry["domain_digest"]:
            raise DigestMismatchError(
                f"model {entry['model_id']}: regenerated domain digest {digest} "
                f"differs from manifest {entry['domain_digest']}")
        checkpoint = directory / entry["checkpoint"]
        if not checkpoint.exists():
            raise MissingCheckpointError(f"checkpoint {checkpoint} listed in manifest is missing")
        models.append(ZooModel(entry["model_id"], load_checkpoint(checkpoint),
                               entry["val_acc"], digest))
        data.append(generate_domain(spec))
    return Zoo(zoo_id=manifest["zoo_id"], config=config, specs=specs,
               models=models, data=data)


def save_task_file(path: str | Path, task: QueryTask) -> None:
    header = {"format_version": TASK_FILE_VERSION, "k_T": task.category_count,
              "d": task.feature_dim, "q_n": task.q_n}
    write_with_header(path, header, {
        "samples": task.samples,
        "labels": task.labels.astype(np.float64),
    })


def load_task_file(path: str | Path) -> QueryTask:
    header, arrays = read_with_header(path)
    version = header.get("format_version")
    if version != TASK_FILE_VERSION:
        raise ManifestVersionError(
            f"task file format_version {version!r}, this build reads {TASK_FILE_VERSION}")
    task = QueryTask(arrays["samples"], arrays["labels"].astype(np.int64), int(header["q_n"]))
    if task.category_count != header["k_T"] or task.feature_dim != header["d"]:
        raise DimensionError("task payload does not match its header")
    return task
