"""End-to-end CLI behavior: artifacts, exit codes, and error JSON."""
import contextlib
import io
import json
from pathlib import Path

import numpy as np
import pytest

from zooselect.cli import main
from zooselect.nncore import derive_rng
from zooselect.zoo import load_zoo, sample_task, save_task_file

TINY = ["--seed=5", "--zoo.size=3", "--zoo.categories=3", "--zoo.hidden_width=16",
        "--train.epochs=2", "--train.batch_size=4", "--train.hidden=8",
        "--train.tasks_per_model=2", "--train.q_n=3",
        "--train.val_tasks_per_model=1", "--eval.tasks_per_model=2",
        "--eval.q_n=3"]


def run(*args):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(args))
    return code, out.getvalue(), err.getvalue()


def run_in(workdir, command, *extra):
    return run("--workdir", str(workdir), command, *TINY, *extra)


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch):
    monkeypatch.delenv("K2V_SEED", raising=False)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """One finished pipeline workdir shared by the read-only tests."""
    mp = pytest.MonkeyPatch()
    mp.delenv("K2V_SEED", raising=False)
    root = tmp_path_factory.mktemp("cli")
    outputs = {}
    for command in ("zoo-build", "probe", "train", "eval"):
        code, out, err = run_in(root, command)
        assert code == 0, f"{command} failed: {err}"
        outputs[command] = out
    task = sample_task(load_zoo(root / "zoo").data[1], 4,
                       derive_rng(99, "demo"), half="eval")
    save_task_file(root / "demo.task", task)
    yield root, outputs
    mp.undo()


# ---------------------------------------------------------------------------
# the happy path


def test_zoo_build_artifacts_and_summary(work):
    root, outputs = work
    assert (root / "zoo" / "manifest.json").exists()
    assert sorted(p.name for p in (root / "zoo" / "models").iterdir()) == \
        ["m000.k2v", "m001.k2v", "m002.k2v"]
    assert "3 models" in outputs["zoo-build"]
    assert "validation accuracy" in outputs["zoo-build"]
    record = json.loads((root / "zoo" / "run-config.json").read_text())
    assert record["config"]["zoo"]["size"] == 3
    assert record["config"]["seed"] == 5


def test_probe_artifacts_and_report(work):
    root, outputs = work
    probe_dir = root / "probe" / "external"
    assert sorted(p.name for p in probe_dir.glob("*.probe")) == \
        ["m000.probe", "m001.probe", "m002.probe"]
    report = json.loads((probe_dir / "report.json").read_text())
    assert report["unencodable_models"] == []
    assert set(report["models"]) == {"m000", "m001", "m002"}
    assert "categories covered" in outputs["probe"]


def test_train_artifacts_and_log(work):
    root, outputs = work
    train_dir = root / "train"
    for name in ("encoder.k2v", "encoder.json", "run-config.json", "log.jsonl"):
        assert (train_dir / name).exists()
    assert (train_dir / "store" / "store.json").exists()
    records = [json.loads(line) for line in
               (train_dir / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [0, 1]
    assert all({"loss", "loss_mkc", "loss_sal", "val_r1"} <= set(r) for r in records)
    assert "trained 2 epochs" in outputs["train"]


def test_eval_summary_and_table(work):
    root, outputs = work
    summary = json.loads((root / "eval" / "summary.json").read_text())
    assert summary["task_count"] == 6 and summary["model_count"] == 3
    assert 0.0 <= summary["r_at_1"] <= summary["r_at_3"] <= 1.0
    assert "R@1" in outputs["eval"] and "mean Spearman" in outputs["eval"]


def test_retrieve_text_and_json(work):
    root, _ = work
    code, out, err = run_in(root, "retrieve", "--task", "demo.task")
    assert code == 0, err
    lines = [line for line in out.splitlines() if "DIS=" in line]
    assert len(lines) == 3
    dis_values = [float(line.rpartition("DIS=")[2]) for line in lines]
    assert dis_values == sorted(dis_values)
    record = json.loads((root / "retrieve" / "demo.ranking.json").read_text())
    assert [r["rank"] for r in record["ranking"]] == [1, 2, 3]
    assert record["k_T"] == 3 and record["q_n"] == 4
    assert record["ranking"][0]["model_id"] in {"m000", "m001", "m002"}


def test_retrieve_top_k(work):
    root, _ = work
    code, out, _ = run_in(root, "retrieve", "--task", "demo.task", "--top-k", "2")
    assert code == 0
    assert len([line for line in out.splitlines() if "DIS=" in line]) == 2


def test_sweep_writes_table(work):
    root, _ = work
    code, out, err = run_in(root, "sweep", "--axis", "query_images",
                            "--grid", "[3]")
    assert code == 0, err
    table = json.loads((root / "sweep" / "query_images.json").read_text())
    assert table["axis"] == "query_images"
    assert [row["value"] for row in table["rows"]] == [3]
    assert table["errors"] == []
    assert "query_images=3" in out


def test_train_is_bitwise_reproducible(work, tmp_path):
    root, _ = work
    code, _, err = run("--workdir", str(tmp_path), "zoo-build", *TINY)
    assert code == 0, err
    code, _, err = run("--workdir", str(tmp_path), "probe", *TINY)
    assert code == 0, err
    code, _, err = run("--workdir", str(tmp_path), "train", *TINY)
    assert code == 0, err
    for rel in ("zoo/manifest.json", "probe/external/m001.probe",
                "train/encoder.k2v", "train/store/store.k2v", "train/log.jsonl"):
        assert (tmp_path / rel).read_bytes() == (root / rel).read_bytes(), rel


# ---------------------------------------------------------------------------
# config layering through the CLI


def test_env_seed_reaches_the_zoo(tmp_path, monkeypatch):
    monkeypatch.setenv("K2V_SEED", "6")
    code, out, err = run("--workdir", str(tmp_path), "zoo-build",
                         "--zoo.size=1", "--zoo.categories=3",
                         "--zoo.hidden_width=16")
    assert code == 0, err
    manifest = json.loads((tmp_path / "zoo" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 6


def test_config_file_resolved_relative_to_workdir(tmp_path):
    (tmp_path / "run.json").write_text(json.dumps({"zoo": {
        "size": 1, "categories": 3, "hidden_width": 16}}))
    code, out, err = run("--workdir", str(tmp_path), "--config", "run.json",
                         "zoo-build")
    assert code == 0, err
    assert "1 models" in out


def test_preset_flag_is_recorded(tmp_path):
    code, _, err = run("--workdir", str(tmp_path), "--preset", "paper-fidelity",
                       "zoo-build", "--zoo.size=1", "--zoo.categories=3",
                       "--zoo.hidden_width=16")
    assert code == 0, err
    record = json.loads((tmp_path / "zoo" / "run-config.json").read_text())
    assert record["config"]["train"]["batch_size"] == 200


# ---------------------------------------------------------------------------
# failure reporting


def error_json(err):
    return json.loads(err.strip().splitlines()[-1])


def test_unknown_config_key_fails_with_json(tmp_path):
    code, _, err = run("--workdir", str(tmp_path), "zoo-build", "--zoo.nope=1")
    assert code == 1
    payload = error_json(err)
    assert payload["command"] == "zoo-build"
    assert payload["error"] == "ConfigError"
    assert "zoo.nope" in payload["message"]


def test_bad_flag_is_a_usage_error(tmp_path):
    code, _, err = run("--workdir", str(tmp_path), "zoo-build", "--frobnicate")
    assert code == 2
    assert error_json(err)["error"] == "UsageError"


def test_invalid_category_count_rejected_before_work(tmp_path):
    code, _, err = run("--workdir", str(tmp_path), "zoo-build",
                       "--zoo.categories=1")
    assert code == 1
    assert error_json(err)["error"] == "ConfigError"
    assert not (tmp_path / "zoo").exists()


def test_probe_without_zoo_fails_cleanly(tmp_path):
    code, _, err = run_in(tmp_path, "probe")
    assert code == 1
    payload = error_json(err)
    assert payload["command"] == "probe"
    assert payload["error"] == "FileNotFoundError"


def test_retrieve_with_oversized_top_k(work):
    root, _ = work
    code, _, err = run_in(root, "retrieve", "--task", "demo.task",
                          "--top-k", "9")
    assert code == 1
    assert "top_k" in error_json(err)["message"]


def test_sweep_grid_must_be_json_list(work):
    root, _ = work
    code, _, err = run_in(root, "sweep", "--axis", "zoo_size", "--grid", "2")
    assert code == 1
    assert "JSON list" in error_json(err)["message"]


def test_sweep_with_every_value_failing(work, tmp_path):
    root, _ = work
    code, _, err = run("--workdir", str(tmp_path), "sweep", "--axis", "zoo_size",
                       "--grid", "[0]", *TINY)
    assert code == 1
    table = json.loads((tmp_path / "sweep" / "zoo_size.json").read_text())
    assert table["rows"] == [] and len(table["errors"]) == 1
    assert error_json(err)["error"] == "RuntimeError"


def test_unknown_axis_is_a_usage_error(work):
    root, _ = work
    code, _, err = run_in(root, "sweep", "--axis", "nonsense", "--grid", "[1]")
    assert code == 2
    assert error_json(err)["error"] == "UsageError"


def test_help_exits_zero():
    code, _, _ = run("--help")
    assert code == 0
