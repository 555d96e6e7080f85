"""Layered run configuration shared by the CLI and the experiment drivers.

Precedence, lowest to highest: built-in defaults, named preset, config
file (single JSON document), the K2V_SEED environment variable, then
dotted command-line overrides (``train.epochs=40``).  Unknown keys are
rejected rather than ignored, and every command serializes its fully
resolved configuration next to its outputs so runs can be reproduced.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from pathlib import Path

from .alignment import TrainConfig
from .errors import ConfigError
from .metrics import ORACLE_MODES
from .zoo import MAX_CATEGORIES, MIN_CATEGORIES

EMBEDDING_DIMS = (128, 256, 512)
POOL_SOURCES = ("external", "train")
SEED_ENV_VAR = "K2V_SEED"

_TRAIN_DEFAULTS = {f.name: f.default for f in dataclasses.fields(TrainConfig)
                   if f.name != "seed"}

DEFAULTS = {
    "seed": 0,
    "zoo": {
        "size": 12,
        "feature_dim": 32,
        "categories": 4,
        "hidden_width": 32,
        "spread": 0.3,
        "slab_width": 4.0,
        "samples_per_category": {"train": 50, "validation": 25, "query": 40},
        "min_val_acc": 0.9,
        "retries": 3,
        "learning_rate": 0.02,
        "max_epochs": 300,
    },
    "probe": {
        "source": "external",
        "pool_per_domain": 64,
        "pool_seed": 1,
        "tau": 0.9,
        "epsilon": 1e-3,
        "max_iterations": 60,
        "retry_pairs": 5,
    },
    "train": _TRAIN_DEFAULTS,
    "eval": {
        "tasks_per_model": 5,
        "q_n": 5,
        "oracle_mode": "direct",
        "benchmark": "single",
        "mixed_count": 20,
        "max_gap": 1,
    },
}

BENCHMARKS = ("single", "mixed")

# The source setup's scale; allowed to blow the desk runtime budget.
PRESETS = {
    "desk": {},
    "paper-fidelity": {"train": {"batch_size": 200, "hidden": 1000}},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, overlay: dict, path: str = "") -> None:
    for key, value in overlay.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} expects a section, got {value!r}")
            _merge(base[key], value, here)
        else:
            base[key] = value


def _set_dotted(cfg: dict, dotted: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = dotted.split(".")
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {'.'.join(parts[: i + 1])!r}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"config key {dotted!r} is a section, not a value")
    node[leaf] = value


def _check_number(cfg: dict, path: str, kind=float) -> None:
    node = cfg
    for part in path.split("."):
        node = node[part]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"config key {path!r} must be a number, got {node!r}")
    if kind is int and not isinstance(node, int):
        raise ConfigError(f"config key {path!r} must be an integer, got {node!r}")


def validate_config(cfg: dict) -> dict:
    """Structural and cross-module checks; deeper checks live downstream."""
    for path in ("seed", "zoo.size", "zoo.feature_dim", "zoo.categories",
                 "zoo.hidden_width", "zoo.retries", "zoo.max_epochs",
                 "probe.pool_per_domain", "probe.pool_seed", "probe.max_iterations",
                 "probe.retry_pairs", "train.batch_size", "train.epochs",
                 "train.tasks_per_model", "train.q_n", "train.val_tasks_per_model",
                 "train.hidden", "train.embedding_dim", "eval.tasks_per_model",
                 "eval.q_n", "eval.mixed_count", "eval.max_gap"):
        _check_number(cfg, path, kind=int)
    for path in ("zoo.spread", "zoo.slab_width", "zoo.min_val_acc", "zoo.learning_rate",
                 "probe.tau", "probe.epsilon", "train.alpha", "train.margin",
                 "train.learning_rate"):
        _check_number(cfg, path, kind=float)
    if cfg["seed"] < 0:
        raise ConfigError(f"seed must be non-negative, got {cfg['seed']}")
    if not MIN_CATEGORIES <= cfg["zoo"]["categories"] <= MAX_CATEGORIES:
        raise ConfigError(
            f"zoo.categories must be in [{MIN_CATEGORIES}, {MAX_CATEGORIES}], "
            f"got {cfg['zoo']['categories']}")
    if cfg["train"]["embedding_dim"] not in EMBEDDING_DIMS:
        raise ConfigError(
            f"train.embedding_dim must be one of {EMBEDDING_DIMS}, "
            f"got {cfg['train']['embedding_dim']}")
    if cfg["probe"]["source"] not in POOL_SOURCES:
        raise ConfigError(
            f"probe.source must be one of {POOL_SOURCES}, got {cfg['probe']['source']!r}")
    if cfg["eval"]["oracle_mode"] not in ORACLE_MODES:
        raise ConfigError(
            f"eval.oracle_mode must be one of {ORACLE_MODES}, "
            f"got {cfg['eval']['oracle_mode']!r}")
    if cfg["eval"]["benchmark"] not in BENCHMARKS:
        raise ConfigError(
            f"eval.benchmark must be one of {BENCHMARKS}, "
            f"got {cfg['eval']['benchmark']!r}")
    if cfg["eval"]["mixed_count"] < 1 or cfg["eval"]["max_gap"] < 1:
        raise ConfigError("eval.mixed_count and eval.max_gap must be at least 1")
    try:
        TrainConfig(seed=cfg["seed"], **cfg["train"])
    except (ValueError, TypeError) as err:
        raise ConfigError(f"train section invalid: {err}") from err
    return cfg


def resolve_config(config_file: str | Path | None = None,
                   overrides: list[str] | tuple[str, ...] = (),
                   preset: str | None = None,
                   env: dict | None = None) -> dict:
    """Layer all sources into one validated configuration dict."""
    env = os.environ if env is None else env
    cfg = default_config()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
        _merge(cfg, copy.deepcopy(PRESETS[preset]))
    if config_file is not None:
        try:
            loaded = json.loads(Path(config_file).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {config_file} is not valid JSON: {err}") from err
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {config_file} must hold a JSON object")
        _merge(cfg, loaded)
    if SEED_ENV_VAR in env:
        raw = env[SEED_ENV_VAR]
        try:
            cfg["seed"] = int(raw)
        except ValueError as err:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from err
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, _, raw = item.partition("=")
        _set_dotted(cfg, dotted.strip(), raw)
    return validate_config(cfg)


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_resolved(cfg: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {"config": cfg, "digest": config_digest(cfg)}
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path
