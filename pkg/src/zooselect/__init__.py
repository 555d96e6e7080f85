"""zooselect: retrieve the best-fitting classifier from a model zoo.

The pipeline probes each black-box classifier near its decision
boundaries, encodes the probed structure and the query task into a
shared embedding space trained for consistency, and ranks models by
cosine distance to the task.

Typical use goes through :func:`run_pipeline` (or the ``zooselect``
command line); the re-exports below cover each stage individually.
"""
from .alignment import (EmbeddingStore, TrainConfig, TrainResult, build_store,
                        load_store, retrieve, save_store, train_proxy)
from .config import DEFAULTS, PRESETS, config_digest, resolve_config, validate_config
from .encoders import (ModelEncoderParams, QueryEncoderParams, encode_model,
                       encode_query, load_encoder_pair, save_encoder_pair)
from .experiments import (PipelineResult, benchmark_tasks, coverage_report,
                          evaluate_store, mixed_benchmark_tasks,
                          probe_parity_experiment, probe_zoo, run_pipeline, sweep)
from .metrics import (MetricSummary, OracleTable, build_oracle, format_summary_table,
                      pearson, recall_at_k, spearman, summarize)
from .probe import (ProbeResult, find_boundary_sample, load_probe_artifact,
                    probe_model, save_probe_artifact)
from .zoo import (QueryTask, Zoo, build_zoo, load_task_file, load_zoo,
                  sample_mixed_task, sample_task, save_task_file, save_zoo)

__version__ = "0.1.0"

__all__ = [
    "DEFAULTS", "EmbeddingStore", "MetricSummary", "ModelEncoderParams",
    "OracleTable", "PRESETS", "PipelineResult", "ProbeResult", "QueryEncoderParams",
    "QueryTask", "TrainConfig", "TrainResult", "Zoo", "benchmark_tasks",
    "build_oracle", "build_store", "build_zoo", "config_digest", "coverage_report",
    "encode_model", "encode_query", "evaluate_store", "find_boundary_sample",
    "format_summary_table", "load_encoder_pair", "load_probe_artifact",
    "load_store", "load_task_file", "load_zoo", "mixed_benchmark_tasks",
    "pearson", "probe_model", "probe_parity_experiment", "probe_zoo",
    "recall_at_k", "resolve_config", "retrieve", "run_pipeline",
    "sample_mixed_task", "sample_task", "save_encoder_pair", "save_probe_artifact",
    "save_store", "save_task_file", "save_zoo", "spearman", "summarize",
    "sweep", "train_proxy", "validate_config",
]
