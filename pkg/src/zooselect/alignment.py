"""Joint embedding space over probed models and query tasks, plus retrieval.

Training pulls each task's embedding toward the embedding of the model
whose domain produced it (matched branch), pushes it off every other
model once their cosine exceeds a margin (unmatched branch), and keeps
model embeddings self-identifying through a classifier head:

    L = L_identity + alpha * L_alignment

Model embeddings are recomputed every optimizer step while parameters
move; the embedding store is built once, after freezing.  Retrieval
ranks stored models by ascending cosine distance ``1 - cos``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .encoders import (ModelEncoderParams, QueryEncoderParams, VARIANTS,
                       classifier_logits, encode_model, encode_model_tensor,
                       encode_query, encode_query_tensor)
from .errors import (GradientFlowError, TrainingDivergedError,
                     UncoveredModelError)
from .nncore import (AdamState, Tensor, adam_step, add_n, backward,
                     cosine_similarity, derive_rng, derive_seed,
                     load_checkpoint, save_checkpoint, softmax_cross_entropy)
from .probe import KnowledgeGraphSet
from .zoo import QueryTask, Zoo, evaluate_accuracy, sample_task

SAL_VARIANTS = ("cosine", "contrastive")
STORE_FILE_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; desk-scale defaults, batch 200 in the source setup."""

    alpha: float = 1.0
    margin: float = 0.4
    batch_size: int = 32
    learning_rate: float = 1e-4
    epochs: int = 30
    seed: int = 0
    sal_variant: str = "cosine"
    tasks_per_model: int = 8
    q_n: int = 5
    val_tasks_per_model: int = 2
    hidden: int = 128
    embedding_dim: int = 256
    model_variant: str = "lstm"
    query_variant: str = "lstm"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 <= self.margin < 1:
            raise ValueError(f"margin must be in [0, 1), got {self.margin}")
        if not 2 <= self.q_n <= 8:
            raise ValueError(f"q_n must be in [2, 8], got {self.q_n}")
        for name in ("batch_size", "epochs", "tasks_per_model", "val_tasks_per_model",
                     "hidden", "embedding_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.sal_variant not in SAL_VARIANTS:
            raise ValueError(f"sal_variant {self.sal_variant!r} not in {SAL_VARIANTS}")
        for v in (self.model_variant, self.query_variant):
            if v not in VARIANTS:
                raise ValueError(f"encoder variant {v!r} not in {VARIANTS}")


# ---------------------------------------------------------------------------
# losses


def loss_mkc(h: Tensor, model_index: int, encoder: ModelEncoderParams) -> Tensor:
    """Cross-entropy of the classifier head against the model's own index."""
    return softmax_cross_entropy(classifier_logits(h, encoder), model_index)


def loss_sal(t: Tensor, h: Tensor, matched: bool, margin: float = 0.4) -> Tensor:
    """Two-branch alignment loss: pull matched pairs, hinge-push the rest."""
    c = cosine_similarity(t, h)
    if matched:
        return 1.0 - c
    return (c - margin).relu()


def loss_sal_contrastive(t: Tensor, h: Tensor, matched: bool, margin: float = 0.4) -> Tensor:
    """Squared variant of both branches."""
    c = cosine_similarity(t, h)
    if matched:
        d = 1.0 - c
    else:
        d = (c - margin).relu()
    return d * d


_SAL = {"cosine": loss_sal, "contrastive": loss_sal_contrastive}


def total_loss(batch: list[tuple[QueryTask, int]],
               graph_sets: list[KnowledgeGraphSet],
               model_encoder: ModelEncoderParams,
               query_encoder: QueryEncoderParams,
               config: TrainConfig) -> tuple[Tensor, dict[str, float]]:
    """Batch objective and its components.

    Each batch item pairs a query task with the index of the model whose
    domain produced it.  All model embeddings are computed fresh from
    ``graph_sets`` (index-aligned with classifier targets); per item the
    identity term uses the matched model and the alignment term pairs
    the task against the matched model plus the mean over all others.
    """
    if not batch:
        raise ValueError("total_loss of an empty batch")
    m = len(graph_sets)
    sal = _SAL[config.sal_variant]
    h = [encode_model_tensor(gs, model_encoder) for gs in graph_sets]
    mkc_terms = [loss_mkc(h[idx], idx, model_encoder) for _, idx in batch]
    mkc = add_n(mkc_terms) / len(batch)
    if config.alpha == 0.0:
        loss = mkc
        parts = {"loss": loss.item(), "loss_mkc": mkc.item(), "loss_sal": 0.0}
        return loss, parts
    sal_terms = []
    for task, idx in batch:
        t = encode_query_tensor(task, query_encoder)
        term = sal(t, h[idx], matched=True, margin=config.margin)
        if m > 1:
            pushes = [sal(t, h[j], matched=False, margin=config.margin)
                      for j in range(m) if j != idx]
            term = term + add_n(pushes) / (m - 1)
        sal_terms.append(term)
    sal_mean = add_n(sal_terms) / len(batch)
    loss = mkc + config.alpha * sal_mean
    parts = {"loss": loss.item(), "loss_mkc": mkc.item(), "loss_sal": sal_mean.item()}
    return loss, parts


# ---------------------------------------------------------------------------
# embedding store and retrieval


@dataclass
class EmbeddingStore:
    """One frozen embedding per model, all from the same probe pool."""

    embedding_dim: int
    pool_id: str
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def model_ids(self) -> list[str]:
        return sorted(self.vectors)


def build_store(graph_sets: dict[str, KnowledgeGraphSet | list[KnowledgeGraphSet]],
                model_encoder: ModelEncoderParams) -> EmbeddingStore:
    """Encode every model's graph set(s) with frozen parameters.

    A model given several graph sets (several probe pools) is stored as
    the mean of its per-pool embeddings.
    """
    if not graph_sets:
        raise ValueError("cannot build a store from zero graph sets")
    vectors: dict[str, np.ndarray] = {}
    pool_ids = set()
    for model_id in sorted(graph_sets):
        sets = graph_sets[model_id]
        sets = [sets] if isinstance(sets, KnowledgeGraphSet) else list(sets)
        encoded = [encode_model(gs, model_encoder).vector for gs in sets]
        pool_ids.update(gs.pool_id for gs in sets)
        vectors[model_id] = np.mean(encoded, axis=0)
    return EmbeddingStore(embedding_dim=model_encoder.embedding_dim,
                          pool_id="+".join(sorted(pool_ids)), vectors=vectors)


def retrieve(query: np.ndarray, store: EmbeddingStore,
             top_k: int | None = None) -> list[tuple[str, float]]:
    """Models by ascending cosine distance ``1 - cos(query, h)``.

    Exact distance ties order lexically by model_id, so reports are
    reproducible.  ``top_k`` trims the ranking; default returns all.
    """
    if len(store) == 0:
        raise ValueError("cannot retrieve from an empty store")
    if top_k is None:
        top_k = len(store)
    if not 1 <= top_k <= len(store):
        raise ValueError(f"top_k must be in [1, {len(store)}], got {top_k}")
    q = Tensor(np.asarray(query, dtype=np.float64))
    ranked = sorted(
        ((1.0 - cosine_similarity(q, Tensor(vec)).item(), model_id)
         for model_id, vec in store.vectors.items()))
    return [(model_id, dis) for dis, model_id in ranked[:top_k]]


def save_store(store: EmbeddingStore, directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"format_version": STORE_FILE_VERSION, "embedding_dim": store.embedding_dim,
             "pool_id": store.pool_id, "model_ids": store.model_ids}
    json_path = directory / "store.json"
    json_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    k2v_path = directory / "store.k2v"
    save_checkpoint(k2v_path, {f"h.{mid}": vec for mid, vec in store.vectors.items()})
    return json_path, k2v_path


def load_store(directory: str | Path) -> EmbeddingStore:
    directory = Path(directory)
    index = json.loads((directory / "store.json").read_text())
    if index.get("format_version") != STORE_FILE_VERSION:
        raise ValueError(f"store version {index.get('format_version')!r} unsupported")
    arrays = load_checkpoint(directory / "store.k2v")
    vectors = {name[len("h."):]: arr for name, arr in arrays.items() if name.startswith("h.")}
    if sorted(vectors) != sorted(index["model_ids"]):
        raise ValueError("store index and vector payload disagree on model ids")
    for mid, vec in vectors.items():
        if vec.shape != (index["embedding_dim"],):
            raise ValueError(f"stored vector {mid} has shape {vec.shape}, "
                             f"expected ({index['embedding_dim']},)")
    return EmbeddingStore(embedding_dim=index["embedding_dim"],
                          pool_id=index["pool_id"], vectors=vectors)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model_encoder: ModelEncoderParams
    query_encoder: QueryEncoderParams
    store: EmbeddingStore
    history: list[dict]
    model_ids: list[str]


def _check_gradient_flow(model_encoder: ModelEncoderParams,
                         query_encoder: QueryEncoderParams, alpha: float) -> None:
    """Every parameter must have received gradient on the first step."""
    stale = [f"model:{n}" for n, p in model_encoder.params.items() if not p._touched]
    if alpha > 0:
        stale += [f"query:{n}" for n, p in query_encoder.params.items() if not p._touched]
    if stale:
        raise GradientFlowError(
            "parameters received no gradient on the first step: " + ", ".join(stale))


def _validation_tasks(zoo: Zoo, config: TrainConfig) -> tuple[list[QueryTask], list[set[int]]]:
    """Held-out tasks plus, per task, the set of oracle-best model indices."""
    rng = derive_rng(config.seed, "val")
    tasks, truths = [], []
    for i in range(zoo.size):
        for _ in range(config.val_tasks_per_model):
            task = sample_task(zoo.data[i], config.q_n, rng, half="eval")
            accs = np.array([evaluate_accuracy(m, task) for m in zoo.models])
            tasks.append(task)
            truths.append(set(np.flatnonzero(accs == accs.max()).tolist()))
    return tasks, truths


def _validation_r1(tasks: list[QueryTask], truths: list[set[int]],
                   model_encoder: ModelEncoderParams, query_encoder: QueryEncoderParams,
                   graph_sets: list[KnowledgeGraphSet], model_ids: list[str]) -> float:
    store = build_store({mid: gs for mid, gs in zip(model_ids, graph_sets)}, model_encoder)
    index_of = {mid: i for i, mid in enumerate(model_ids)}
    hits = 0
    for task, truth in zip(tasks, truths):
        picked = retrieve(encode_query(task, query_encoder).vector, store, top_k=1)[0][0]
        hits += index_of[picked] in truth
    return hits / len(tasks)


def train_proxy(zoo: Zoo, graph_sets: dict[str, KnowledgeGraphSet], config: TrainConfig,
                log: Callable[[dict], None] | None = None) -> TrainResult:
    """Episodic optimization of both encoders over the zoo's query splits.

    Epoch loop: sample ``tasks_per_model`` tasks from every model's
    episode half, shuffle, and step over batches; every step re-encodes
    all model graph sets because the encoder just moved.  Emits one
    history record per epoch with mean losses and held-out retrieval
    R@1 measured against the brute-force oracle.
    """
    missing = [mid for mid in zoo.model_ids if mid not in graph_sets]
    if missing:
        raise UncoveredModelError(f"no graph set for models: {', '.join(missing)}")
    model_ids = list(zoo.model_ids)
    ordered_sets = [graph_sets[mid] for mid in model_ids]
    feature_dim = zoo.models[0].feature_dim
    model_encoder = ModelEncoderParams.build(
        feature_dim, config.hidden, config.embedding_dim, zoo.size,
        variant=config.model_variant, seed=derive_seed(config.seed, "model-encoder"))
    query_encoder = QueryEncoderParams.build(
        feature_dim, config.hidden, config.embedding_dim,
        variant=config.query_variant, seed=derive_seed(config.seed, "query-encoder"))
    opt_model = AdamState(model_encoder.params, config.learning_rate)
    opt_query = AdamState(query_encoder.params, config.learning_rate)
    val_tasks, val_truths = _validation_tasks(zoo, config)
    episode_rng = derive_rng(config.seed, "episodes")
    history: list[dict] = []
    first_step = True
    for epoch in range(config.epochs):
        pairs: list[tuple[QueryTask, int]] = []
        for i in range(zoo.size):
            for _ in range(config.tasks_per_model):
                pairs.append((sample_task(zoo.data[i], config.q_n, episode_rng,
                                          half="episode"), i))
        order = episode_rng.permutation(len(pairs))
        sums = {"loss": 0.0, "loss_mkc": 0.0, "loss_sal": 0.0}
        steps = 0
        for lo in range(0, len(order), config.batch_size):
            batch = [pairs[j] for j in order[lo:lo + config.batch_size]]
            loss, parts = total_loss(batch, ordered_sets, model_encoder,
                                     query_encoder, config)
            if not math.isfinite(parts["loss"]):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}",
                    diagnostics={"epoch": epoch, "step": steps, **parts})
            backward(loss)
            if first_step:
                _check_gradient_flow(model_encoder, query_encoder, config.alpha)
                first_step = False
            adam_step(model_encoder.params, opt_model)
            if query_encoder.params.grads_pending():
                adam_step(query_encoder.params, opt_query)
            for key in sums:
                sums[key] += parts[key]
            steps += 1
        record = {"epoch": epoch, **{k: sums[k] / steps for k in sums},
                  "val_r1": _validation_r1(val_tasks, val_truths, model_encoder,
                                           query_encoder, ordered_sets, model_ids)}
        history.append(record)
        if log is not None:
            log(record)
    store = build_store({mid: gs for mid, gs in zip(model_ids, ordered_sets)},
                        model_encoder)
    return TrainResult(model_encoder=model_encoder, query_encoder=query_encoder,
                       store=store, history=history, model_ids=model_ids)
