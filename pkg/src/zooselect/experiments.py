"""End-to-end drivers: the full pipeline, the probe-provenance parity
experiment, and single-axis ablation sweeps.

Everything here is a deterministic function of (config, seed): pools,
episodes, benchmark tasks, and training are all derived from the config
seed through tagged sub-seeds, so two runs with one config agree
bitwise.
"""
from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .alignment import TrainConfig, TrainResult, build_store, retrieve, train_proxy
from .encoders import QueryEncoderParams, encode_query
from .metrics import (MetricSummary, OracleTable, Ranking, build_oracle,
                      summarize)
from .nncore import derive_rng
from .probe import KnowledgeGraphSet, ProbePool, ProbeResult, probe_model
from .zoo import (QueryTask, Zoo, build_zoo, external_pool_samples,
                  sample_mixed_task, sample_task, train_pool_samples)

SWEEP_AXES = ("zoo_size", "query_images", "embedding_dim", "encoder_variant",
              "sal_variant")


# ---------------------------------------------------------------------------
# stages


def build_pools(zoo: Zoo, probe_cfg: dict) -> dict[str, ProbePool]:
    """One probe pool per model: a shared fresh pool, or each model's own
    training split."""
    if probe_cfg["source"] == "external":
        pool = ProbePool(
            external_pool_samples(zoo, probe_cfg["pool_per_domain"], probe_cfg["pool_seed"]),
            pool_id=f"ext-{probe_cfg['pool_per_domain']}-{probe_cfg['pool_seed']}",
            source="external")
        return {model_id: pool for model_id in zoo.model_ids}
    return {model_id: ProbePool(train_pool_samples(zoo, i), pool_id=f"train-{model_id}",
                                source=f"train:{model_id}")
            for i, model_id in enumerate(zoo.model_ids)}


def probe_zoo(zoo: Zoo, probe_cfg: dict) -> dict[str, ProbeResult]:
    pools = build_pools(zoo, probe_cfg)
    return {model.model_id: probe_model(
                model, pools[model.model_id], tau=probe_cfg["tau"],
                epsilon=probe_cfg["epsilon"], max_iter=probe_cfg["max_iterations"],
                retry_pairs=probe_cfg["retry_pairs"])
            for model in zoo.models}


def coverage_report(probe_results: dict[str, ProbeResult]) -> dict:
    """Aggregate per-model probing health for reports and exit codes.

    Gap statistics are None (JSON null) for models with no boundary
    samples, keeping the report strictly JSON-serializable.
    """
    per_model = {}
    for model_id in sorted(probe_results):
        report = probe_results[model_id].report
        per_model[model_id] = {
            "covered": report.covered, "uncovered": report.uncovered,
            "masked_pairs": [list(p) for p in report.masked_pairs],
            "retried_pairs": report.retried_pairs,
            "mean_gap": None if math.isnan(report.mean_gap) else report.mean_gap,
            "max_gap": None if math.isnan(report.max_gap) else report.max_gap,
        }
    unencodable = [mid for mid, res in sorted(probe_results.items())
                   if len(res.graph_set.subgraphs) < 2]
    return {"models": per_model, "unencodable_models": unencodable}


def make_train_config(config: dict) -> TrainConfig:
    return TrainConfig(seed=config["seed"], **config["train"])


def benchmark_tasks(zoo: Zoo, eval_cfg: dict, seed: int) -> list[QueryTask]:
    """Held-out tasks from the eval half of each domain's query split.

    ``benchmark: single`` draws ``tasks_per_model`` whole-domain tasks per
    model; ``benchmark: mixed`` draws ``mixed_count`` two-domain tasks for
    transfer-correlation scoring.
    """
    if eval_cfg["benchmark"] == "mixed":
        return mixed_benchmark_tasks(zoo, eval_cfg["mixed_count"], eval_cfg["q_n"],
                                     seed, max_gap=eval_cfg["max_gap"])
    rng = derive_rng(seed, "benchmark")
    return [sample_task(zoo.data[i], eval_cfg["q_n"], rng, half="eval")
            for i in range(zoo.size) for _ in range(eval_cfg["tasks_per_model"])]


def mixed_benchmark_tasks(zoo: Zoo, count: int, q_n: int, seed: int,
                          max_gap: int = 1) -> list[QueryTask]:
    """Two-domain tasks for scoring predicted-vs-true transferability.

    Each task splits its category slots between a random domain and a
    neighbor at most ``max_gap`` away, so the zoo's accuracies on it fall
    off gradually with domain distance instead of spiking at one owner.
    """
    if zoo.size < 2:
        raise ValueError("mixed benchmark needs a zoo of at least 2 models")
    k = zoo.config["categories"]
    rng = derive_rng(seed, "mixed-domain-bench")
    tasks = []
    while len(tasks) < count:
        a = int(rng.integers(0, zoo.size))
        gap = int(rng.integers(1, max_gap + 1))
        b = a + gap if a + gap < zoo.size else a - gap
        if b < 0 or b == a:
            continue
        slots = [a] * (k // 2) + [b] * (k - k // 2)
        tasks.append(sample_mixed_task(zoo.data, slots, q_n, rng, half="eval"))
    return tasks


def rank_tasks(tasks: list[QueryTask], store, query_encoder: QueryEncoderParams
               ) -> list[Ranking]:
    return [retrieve(encode_query(task, query_encoder).vector, store) for task in tasks]


def evaluate_store(zoo: Zoo, tasks: list[QueryTask], store,
                   query_encoder: QueryEncoderParams, oracle_mode: str = "direct",
                   runtime_seconds: float = 0.0
                   ) -> tuple[OracleTable, list[Ranking], MetricSummary]:
    oracle = build_oracle(tasks, zoo, mode=oracle_mode)
    rankings = rank_tasks(tasks, store, query_encoder)
    return oracle, rankings, summarize(rankings, oracle, runtime_seconds)


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class PipelineResult:
    config: dict
    zoo: Zoo
    probe_results: dict[str, ProbeResult]
    graph_sets: dict[str, KnowledgeGraphSet]
    train_result: TrainResult
    tasks: list[QueryTask]
    oracle: OracleTable
    rankings: list[Ranking] = field(repr=False)
    summary: MetricSummary = None
    runtimes: dict[str, float] = field(default_factory=dict)


def run_pipeline(config: dict, log: Callable[[dict], None] | None = None) -> PipelineResult:
    """zoo-build -> probe -> train -> eval, all in memory."""
    t0 = time.perf_counter()
    zoo = build_zoo(seed=config["seed"], **config["zoo"])
    t1 = time.perf_counter()
    probe_results = probe_zoo(zoo, config["probe"])
    graph_sets = {mid: res.graph_set for mid, res in probe_results.items()}
    t2 = time.perf_counter()
    train_result = train_proxy(zoo, graph_sets, make_train_config(config), log=log)
    t3 = time.perf_counter()
    tasks = benchmark_tasks(zoo, config["eval"], config["seed"])
    oracle, rankings, summary = evaluate_store(
        zoo, tasks, train_result.store, train_result.query_encoder,
        oracle_mode=config["eval"]["oracle_mode"])
    t4 = time.perf_counter()
    summary.runtime_seconds = t4 - t0
    runtimes = {"zoo_s": t1 - t0, "probe_s": t2 - t1, "train_s": t3 - t2,
                "eval_s": t4 - t3, "total_s": t4 - t0}
    return PipelineResult(config=config, zoo=zoo, probe_results=probe_results,
                          graph_sets=graph_sets, train_result=train_result,
                          tasks=tasks, oracle=oracle, rankings=rankings,
                          summary=summary, runtimes=runtimes)


# ---------------------------------------------------------------------------
# probe-provenance parity


def probe_parity_experiment(pipeline: PipelineResult,
                            train_graph_sets: dict[str, KnowledgeGraphSet] | None = None
                            ) -> dict:
    """Identical benchmark, two embedding provenances.

    The trained encoder is frozen; only the probe pool behind each model
    embedding changes (external pool vs the model's own training data).
    Reports both R@1 values, never just the gap.
    """
    cfg = pipeline.config
    if cfg["probe"]["source"] != "external":
        raise ValueError("parity experiment needs the pipeline's own probes "
                         "to come from the external pool")
    if train_graph_sets is None:
        train_cfg = dict(cfg["probe"], source="train")
        train_graph_sets = {mid: res.graph_set
                            for mid, res in probe_zoo(pipeline.zoo, train_cfg).items()}
    missing = [mid for mid in pipeline.zoo.model_ids if mid not in train_graph_sets]
    if missing:
        raise ValueError(f"train-data provenance missing models: {', '.join(missing)}")
    encoder = pipeline.train_result.model_encoder
    store_train = build_store(train_graph_sets, encoder)
    rankings_train = rank_tasks(pipeline.tasks, store_train,
                                pipeline.train_result.query_encoder)
    summary_train = summarize(rankings_train, pipeline.oracle)
    return {
        "r1_external": pipeline.summary.r_at_1,
        "r1_train": summary_train.r_at_1,
        "gap": abs(pipeline.summary.r_at_1 - summary_train.r_at_1),
        "r3_external": pipeline.summary.r_at_3,
        "r3_train": summary_train.r_at_3,
        "task_count": len(pipeline.tasks),
    }


# ---------------------------------------------------------------------------
# ablation sweeps


def apply_axis(config: dict, axis: str, value) -> dict:
    """A deep-copied config with one ablation axis changed."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")
    cfg = copy.deepcopy(config)
    if axis == "zoo_size":
        cfg["zoo"]["size"] = int(value)
    elif axis == "query_images":
        cfg["train"]["q_n"] = int(value)
        cfg["eval"]["q_n"] = int(value)
    elif axis == "embedding_dim":
        cfg["train"]["embedding_dim"] = int(value)
    elif axis == "encoder_variant":
        if isinstance(value, str):
            model_variant, _, query_variant = value.partition(":")
            query_variant = query_variant or model_variant
        else:
            model_variant, query_variant = value
        cfg["train"]["model_variant"] = model_variant
        cfg["train"]["query_variant"] = query_variant
    else:
        cfg["train"]["sal_variant"] = value
    return cfg


def sweep(axis: str, grid: list, base_config: dict,
          log: Callable[[dict], None] | None = None) -> dict:
    """One full train+eval cycle per grid value, seeds held fixed.

    A failing cycle is recorded in ``errors`` and the table stays
    partial rather than aborting the whole sweep.
    """
    if not grid:
        raise ValueError("sweep needs a non-empty grid")
    rows, errors = [], []
    for value in grid:
        try:
            result = run_pipeline(apply_axis(base_config, axis, value))
            row = {"value": value, "summary": result.summary.to_dict(),
                   "runtimes": result.runtimes}
            rows.append(row)
            if log is not None:
                log(row)
        except Exception as err:  # noqa: BLE001 - partial-table contract
            errors.append({"value": value, "error": type(err).__name__,
                           "message": str(err)})
    return {"axis": axis, "grid": list(grid), "rows": rows, "errors": errors}
