"""Encoders from probed knowledge and from query tasks into one embedding space.

The model side folds each category subgraph through a shared inner
bidirectional LSTM (anchor sitting at its own category's position in the
node sequence), then folds the per-category summaries through an outer
bidirectional LSTM and projects to the embedding width.  The query side
averages each category's samples and folds the means through its own
bidirectional LSTM.  ``concat`` and ``avg`` variants swap each LSTM for
a flatten-then-linear or mean-then-linear map, for ablation sweeps.

The classifier head maps a model embedding to zoo-index logits.  It
exists for the training objective only; retrieval never consults it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .nncore import (ParameterSet, Tensor, add_n, bilstm_forward, concat,
                     dense_forward, load_checkpoint, save_checkpoint)
from .probe import KnowledgeGraphSet
from .zoo import QueryTask

VARIANTS = ("lstm", "concat", "avg")
# Fixed-length layouts (concat variant) are padded to this many categories,
# the most a domain may have.
K_MAX = 10
ENCODER_FILE_VERSION = 1


def _check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"unknown encoder variant {variant!r}, expected one of {VARIANTS}")
    return variant


@dataclass
class ModelEncoderParams:
    feature_dim: int
    hidden: int
    embedding_dim: int
    zoo_size: int
    variant: str
    params: ParameterSet

    @classmethod
    def build(cls, feature_dim: int, hidden: int, embedding_dim: int, zoo_size: int,
              variant: str = "lstm", seed: int = 0) -> "ModelEncoderParams":
        _check_variant(variant)
        ps = ParameterSet(seed)
        if variant == "lstm":
            ps.add_bilstm("inner", feature_dim, hidden)
            ps.add_bilstm("outer", 2 * hidden, hidden)
        elif variant == "concat":
            ps.add_dense("inner_cat", K_MAX * feature_dim, 2 * hidden)
            ps.add_dense("outer_cat", K_MAX * 2 * hidden, 2 * hidden)
        else:
            ps.add_dense("inner_avg", feature_dim, 2 * hidden)
            ps.add_dense("outer_avg", 2 * hidden, 2 * hidden)
        ps.add_dense("proj", 2 * hidden, embedding_dim)
        ps.add_dense("head", embedding_dim, zoo_size)
        return cls(feature_dim, hidden, embedding_dim, zoo_size, variant, ps)


@dataclass
class QueryEncoderParams:
    feature_dim: int
    hidden: int
    embedding_dim: int
    variant: str
    params: ParameterSet

    @classmethod
    def build(cls, feature_dim: int, hidden: int, embedding_dim: int,
              variant: str = "lstm", seed: int = 0) -> "QueryEncoderParams":
        _check_variant(variant)
        ps = ParameterSet(seed)
        if variant == "lstm":
            ps.add_bilstm("cell", feature_dim, hidden)
        elif variant == "concat":
            ps.add_dense("cat", K_MAX * feature_dim, 2 * hidden)
        else:
            ps.add_dense("avg", feature_dim, 2 * hidden)
        ps.add_dense("proj", 2 * hidden, embedding_dim)
        return cls(feature_dim, hidden, embedding_dim, variant, ps)


@dataclass(frozen=True)
class ModelVector:
    model_id: str
    pool_id: str
    vector: np.ndarray


@dataclass(frozen=True)
class QueryVector:
    task_id: str
    vector: np.ndarray


# ---------------------------------------------------------------------------
# shared variant plumbing


def _fold_sequence(steps: list[Tensor], enc: ParameterSet, variant: str,
                   prefix: str, pad_to: int, positions: list[int] | None = None) -> Tensor:
    """Reduce a sequence of equal-width vectors to one 2H-wide vector.

    lstm: bidirectional final state.  concat: zero-padded fixed layout
    (each step at its category position) through a linear map.  avg:
    arithmetic mean through a linear map.
    """
    if variant == "lstm":
        name = {"inner": "inner", "outer": "outer", "query": "cell"}[prefix]
        _, final = bilstm_forward(steps, enc, name)
        return final
    if variant == "concat":
        width = steps[0].data.shape[0]
        name = {"inner": "inner_cat", "outer": "outer_cat", "query": "cat"}[prefix]
        slots: list[Tensor] = [Tensor(np.zeros(width)) for _ in range(pad_to)]
        for step, pos in zip(steps, positions if positions is not None else range(len(steps))):
            slots[pos] = step
        return dense_forward(concat(slots), enc, name)
    name = {"inner": "inner_avg", "outer": "outer_avg", "query": "avg"}[prefix]
    return dense_forward(add_n(steps) / len(steps), enc, name)


# ---------------------------------------------------------------------------
# model side


def encode_model_tensor(graph_set: KnowledgeGraphSet, encoder: ModelEncoderParams) -> Tensor:
    """Differentiable model embedding; gradients reach the encoder parameters."""
    variant = encoder.variant
    k = graph_set.category_count
    if k > K_MAX:
        raise DimensionError(f"graph set has {k} categories, encoder supports up to {K_MAX}")
    if len(graph_set.subgraphs) < 2:
        raise ValueError(
            f"model {graph_set.model_id}: need at least 2 covered categories to encode, "
            f"got {len(graph_set.subgraphs)}")
    cats = [sub.category for sub in graph_set.subgraphs]
    if cats != sorted(set(cats)):
        raise ValueError(f"subgraphs must be in ascending category order, got {cats}")
    summaries, positions = [], []
    for sub in graph_set.subgraphs:
        if sub.nodes.shape[1] != encoder.feature_dim:
            raise DimensionError(
                f"graph nodes have width {sub.nodes.shape[1]}, encoder expects {encoder.feature_dim}")
        steps = [Tensor(sub.nodes[t]) for t in range(k)]
        summaries.append(_fold_sequence(steps, encoder.params, variant, "inner", K_MAX))
        positions.append(sub.category)
    folded = _fold_sequence(summaries, encoder.params, variant, "outer", K_MAX,
                            positions=positions)
    return dense_forward(folded, encoder.params, "proj")


def encode_model(graph_set: KnowledgeGraphSet, encoder: ModelEncoderParams) -> ModelVector:
    h = encode_model_tensor(graph_set, encoder)
    return ModelVector(graph_set.model_id, graph_set.pool_id, h.detach())


def classifier_logits(h: Tensor, encoder: ModelEncoderParams) -> Tensor:
    """Zoo-index logits from a model embedding.  Training-objective only."""
    return dense_forward(h, encoder.params, "head")


# ---------------------------------------------------------------------------
# query side


def encode_query_tensor(task: QueryTask, encoder: QueryEncoderParams) -> Tensor:
    """Differentiable query embedding from per-category sample means."""
    k = task.category_count
    if k > K_MAX:
        raise DimensionError(f"task has {k} categories, encoder supports up to {K_MAX}")
    if task.feature_dim != encoder.feature_dim:
        raise DimensionError(
            f"task feature width {task.feature_dim}, encoder expects {encoder.feature_dim}")
    means = [Tensor(task.samples[task.labels == c].mean(axis=0)) for c in range(k)]
    folded = _fold_sequence(means, encoder.params, encoder.variant, "query", K_MAX)
    return dense_forward(folded, encoder.params, "proj")


def encode_query(task: QueryTask, encoder: QueryEncoderParams) -> QueryVector:
    t = encode_query_tensor(task, encoder)
    return QueryVector(task.task_id, t.detach())


# ---------------------------------------------------------------------------
# persistence


def save_encoder_pair(directory: str | Path, model_encoder: ModelEncoderParams,
                      query_encoder: QueryEncoderParams) -> tuple[Path, Path]:
    """K2V1 checkpoint plus a JSON sidecar describing both encoders."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for prefix, ps in (("model", model_encoder.params), ("query", query_encoder.params)):
        for name, p in ps.items():
            arrays[f"{prefix}.{name}"] = p.data
    ckpt_path = directory / "encoder.k2v"
    save_checkpoint(ckpt_path, arrays)
    sidecar = {
        "format_version": ENCODER_FILE_VERSION,
        "model": {"feature_dim": model_encoder.feature_dim, "hidden": model_encoder.hidden,
                  "embedding_dim": model_encoder.embedding_dim, "zoo_size": model_encoder.zoo_size,
                  "variant": model_encoder.variant},
        "query": {"feature_dim": query_encoder.feature_dim, "hidden": query_encoder.hidden,
                  "embedding_dim": query_encoder.embedding_dim, "variant": query_encoder.variant},
    }
    json_path = directory / "encoder.json"
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return ckpt_path, json_path


def load_encoder_pair(directory: str | Path) -> tuple[ModelEncoderParams, QueryEncoderParams]:
    directory = Path(directory)
    sidecar = json.loads((directory / "encoder.json").read_text())
    if sidecar.get("format_version") != ENCODER_FILE_VERSION:
        raise ValueError(f"encoder sidecar version {sidecar.get('format_version')!r} unsupported")
    arrays = load_checkpoint(directory / "encoder.k2v")
    m_cfg, q_cfg = sidecar["model"], sidecar["query"]
    model_encoder = ModelEncoderParams.build(
        m_cfg["feature_dim"], m_cfg["hidden"], m_cfg["embedding_dim"],
        m_cfg["zoo_size"], m_cfg["variant"])
    query_encoder = QueryEncoderParams.build(
        q_cfg["feature_dim"], q_cfg["hidden"], q_cfg["embedding_dim"], q_cfg["variant"])
    model_encoder.params.load_arrays(
        {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")})
    query_encoder.params.load_arrays(
        {k[len("query."):]: v for k, v in arrays.items() if k.startswith("query.")})
    return model_encoder, query_encoder
