"""Command-line pipeline driver.

Six subcommands wire the stages end to end against a shared ``--workdir``:
``zoo-build`` -> ``probe`` -> ``train`` -> ``eval``, plus ``retrieve`` for
one-off task lookups and ``sweep`` for single-axis ablations.  Every
command layers its configuration from defaults, ``--preset``, ``--config``
file, the K2V_SEED environment variable, and dotted ``--section.key=value``
flags, then serializes the resolved result next to its outputs.  Commands
are deterministic: re-running one reproduces its artifacts byte for byte
apart from measured runtimes.  Failures print one JSON object on standard
error and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .alignment import load_store, retrieve, save_store, train_proxy
from .config import config_digest, resolve_config, save_resolved
from .encoders import encode_query, load_encoder_pair, save_encoder_pair
from .errors import ProbePoolUnsuitableError
from .experiments import (SWEEP_AXES, benchmark_tasks, coverage_report,
                          evaluate_store, make_train_config, probe_zoo)
from .experiments import sweep as run_sweep
from .metrics import format_summary_table
from .probe import load_probe_artifact, save_probe_artifact
from .zoo import build_zoo, load_task_file, load_zoo, save_zoo


class UsageError(ValueError):
    """Bad command line: unknown flag or malformed override."""


def _emit_error(command: str, err: BaseException) -> None:
    print(json.dumps({"command": command, "error": type(err).__name__,
                      "message": str(err)}), file=sys.stderr)


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _under_workdir(workdir: Path, raw: str) -> Path:
    path = Path(raw)
    return path if path.is_absolute() else workdir / path


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as the same JSON errors."""

    def error(self, message):
        _emit_error(self.prog, UsageError(message))
        raise SystemExit(2)


def build_parser() -> _Parser:
    parser = _Parser(prog="zooselect",
                     description="Black-box model retrieval: build a synthetic "
                                 "zoo, probe decision boundaries, train the "
                                 "alignment space, and rank models for tasks.")
    parser.add_argument("--workdir", default=".",
                        help="directory all artifacts live under (default: .)")
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="JSON config file layered over the defaults")
    parser.add_argument("--preset", default=None,
                        help="named config preset (desk, paper-fidelity)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("zoo-build", help="train and persist the synthetic model zoo")
    sub.add_parser("probe", help="extract boundary knowledge graphs per model")
    sub.add_parser("train", help="train the alignment encoders and embedding store")
    p_retrieve = sub.add_parser("retrieve", help="rank zoo models for one task file")
    p_retrieve.add_argument("--task", required=True, metavar="FILE",
                            help="task file (JSON header + K2V1 payload)")
    p_retrieve.add_argument("--top-k", type=int, default=None,
                            help="only report the closest K models")
    sub.add_parser("eval", help="score the store against the brute-force oracle")
    p_sweep = sub.add_parser("sweep", help="re-run the pipeline along one ablation axis")
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--grid", required=True, metavar="JSON",
                         help="JSON list of axis values, e.g. '[2,8]'")
    return parser


# ---------------------------------------------------------------------------
# subcommands


def cmd_zoo_build(workdir: Path, cfg: dict, args) -> int:
    zoo = build_zoo(seed=cfg["seed"], **cfg["zoo"])
    out = workdir / "zoo"
    save_zoo(zoo, out)
    save_resolved(cfg, out / "run-config.json")
    print(f"zoo {zoo.zoo_id}: {zoo.size} models, "
          f"{cfg['zoo']['categories']} categories each, "
          f"feature dim {cfg['zoo']['feature_dim']} -> {out}")
    print("validation accuracy: "
          + ", ".join(f"{m.model_id}={m.val_acc:.3f}" for m in zoo.models))
    return 0


def cmd_probe(workdir: Path, cfg: dict, args) -> int:
    zoo = load_zoo(workdir / "zoo")
    results = probe_zoo(zoo, cfg["probe"])
    out = workdir / "probe" / cfg["probe"]["source"]
    out.mkdir(parents=True, exist_ok=True)
    for model_id, result in sorted(results.items()):
        save_probe_artifact(out / f"{model_id}.probe", result,
                            epsilon=cfg["probe"]["epsilon"])
    report = coverage_report(results)
    _write_json(out / "report.json", report)
    save_resolved(cfg, out / "run-config.json")
    k = cfg["zoo"]["categories"]
    for model_id in sorted(results):
        entry = report["models"][model_id]
        gap = "n/a" if entry["mean_gap"] is None else f"{entry['mean_gap']:.2e}"
        print(f"{model_id}: {len(entry['covered'])}/{k} categories covered, "
              f"{len(entry['masked_pairs'])} masked pairs, mean gap {gap}")
    if report["unencodable_models"]:
        _emit_error("probe", ProbePoolUnsuitableError(
            "models with fewer than 2 covered categories cannot be embedded: "
            + ", ".join(report["unencodable_models"])))
        return 1
    print(f"probe artifacts -> {out}")
    return 0


def cmd_train(workdir: Path, cfg: dict, args) -> int:
    zoo = load_zoo(workdir / "zoo")
    probe_dir = workdir / "probe" / cfg["probe"]["source"]
    graph_sets = {}
    for path in sorted(probe_dir.glob("*.probe")):
        result = load_probe_artifact(path)
        graph_sets[result.report.model_id] = result.graph_set
    if not graph_sets:
        raise FileNotFoundError(
            f"no probe artifacts under {probe_dir}; run `zooselect probe` first")
    out = workdir / "train"
    out.mkdir(parents=True, exist_ok=True)
    with (out / "log.jsonl").open("w") as log_file:
        result = train_proxy(
            zoo, graph_sets, make_train_config(cfg),
            log=lambda record: log_file.write(json.dumps(record, sort_keys=True) + "\n"))
    save_encoder_pair(out, result.model_encoder, result.query_encoder)
    save_store(result.store, out / "store")
    save_resolved(cfg, out / "run-config.json")
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs: loss {last['loss']:.4f}, "
          f"validation R@1 {last['val_r1']:.3f}")
    print(f"store: {len(result.store.model_ids)} model vectors, "
          f"dim {result.store.embedding_dim} -> {out}")
    return 0


def cmd_retrieve(workdir: Path, cfg: dict, args) -> int:
    store = load_store(workdir / "train" / "store")
    _, query_encoder = load_encoder_pair(workdir / "train")
    task_path = _under_workdir(workdir, args.task)
    task = load_task_file(task_path)
    ranking = retrieve(encode_query(task, query_encoder).vector, store,
                       top_k=args.top_k)
    record = {
        "task_id": task.task_id, "k_T": task.category_count, "q_n": task.q_n,
        "config_digest": config_digest(cfg),
        "ranking": [{"rank": i, "model_id": model_id, "dis": dis}
                    for i, (model_id, dis) in enumerate(ranking, start=1)],
    }
    out = _write_json(workdir / "retrieve" / f"{task_path.stem}.ranking.json", record)
    save_resolved(cfg, workdir / "retrieve" / "run-config.json")
    print(f"task {task.task_id}: k_T={task.category_count}, q_n={task.q_n}")
    for i, (model_id, dis) in enumerate(ranking, start=1):
        print(f"{i:3d}. {model_id}  DIS={dis:.6f}")
    print(f"ranking -> {out}")
    return 0


def cmd_eval(workdir: Path, cfg: dict, args) -> int:
    zoo = load_zoo(workdir / "zoo")
    store = load_store(workdir / "train" / "store")
    _, query_encoder = load_encoder_pair(workdir / "train")
    tasks = benchmark_tasks(zoo, cfg["eval"], cfg["seed"])
    t0 = time.perf_counter()
    _, _, summary = evaluate_store(zoo, tasks, store, query_encoder,
                                   oracle_mode=cfg["eval"]["oracle_mode"])
    summary.runtime_seconds = time.perf_counter() - t0
    out = workdir / "eval"
    _write_json(out / "summary.json", summary.to_dict())
    save_resolved(cfg, out / "run-config.json")
    print(format_summary_table(summary))
    print(f"summary -> {out / 'summary.json'}")
    return 0


def cmd_sweep(workdir: Path, cfg: dict, args) -> int:
    try:
        grid = json.loads(args.grid)
    except json.JSONDecodeError as err:
        raise ValueError(f"--grid must be a JSON list: {err}") from err
    if not isinstance(grid, list):
        raise ValueError(f"--grid must be a JSON list, got {args.grid!r}")
    table = run_sweep(args.axis, grid, cfg,
                      log=lambda row: print(
                          f"{args.axis}={row['value']}: "
                          f"R@1={row['summary']['r_at_1']:.3f} "
                          f"R@3={row['summary']['r_at_3']:.3f} "
                          f"({row['runtimes']['total_s']:.1f}s)"))
    for failure in table["errors"]:
        print(f"{args.axis}={failure['value']}: failed "
              f"({failure['error']}: {failure['message']})")
    out = workdir / "sweep"
    _write_json(out / f"{args.axis}.json", table)
    save_resolved(cfg, out / f"{args.axis}.config.json")
    if not table["rows"]:
        _emit_error("sweep", RuntimeError(
            f"every value of the {args.axis} grid failed; see {out / (args.axis + '.json')}"))
        return 1
    print(f"sweep table -> {out / (args.axis + '.json')}")
    return 0


_COMMANDS = {
    "zoo-build": cmd_zoo_build,
    "probe": cmd_probe,
    "train": cmd_train,
    "retrieve": cmd_retrieve,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as exit_code:
        return int(exit_code.code or 0)
    overrides = []
    for item in extras:
        if item.startswith("--") and "=" in item:
            overrides.append(item[2:])
        else:
            _emit_error(args.command, UsageError(
                f"unrecognized argument {item!r}; config overrides look like "
                f"--section.key=value"))
            return 2
    workdir = Path(args.workdir)
    config_file = _under_workdir(workdir, args.config) if args.config else None
    try:
        cfg = resolve_config(config_file=config_file, overrides=overrides,
                             preset=args.preset)
        return _COMMANDS[args.command](workdir, cfg, args)
    except Exception as err:  # noqa: BLE001 - single JSON reporting point
        _emit_error(args.command, err)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
