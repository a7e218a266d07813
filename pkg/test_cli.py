"""End-to-end tests of the command-line interface."""
import json

import pandas as pd
import pytest
import yaml

from conftest import tiny_experiment
from skicl.cli import main
from skicl.config import config_to_dict


def write_config(tmp_path, **kwargs):
    params = config_to_dict(tiny_experiment(tmp_path / "default_out", **kwargs))
    path = tmp_path / "params.yaml"
    path.write_text(yaml.safe_dump(params))
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = write_config(root, n_regimes=2, epochs=1)
    run_dir = root / "run"
    assert main(["train", "--config", str(config), "--out", str(run_dir), "--dump-forecasts"]) == 0
    return root, config, run_dir


def test_generate_is_deterministic(tmp_path):
    config = write_config(tmp_path, n_regimes=2)
    assert main(["generate", "--config", str(config), "--out", str(tmp_path / "a"), "--seed", "3"]) == 0
    assert main(["generate", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    for name in ("data.csv", "structure.csv", "meta.json", "ground_truth_W.csv"):
        assert (tmp_path / "a" / "regime_1" / name).read_bytes() == (tmp_path / "b" / "regime_1" / name).read_bytes()
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == ["regime_1", "regime_2"]


def test_train_writes_run_artifacts(trained_run):
    _, _, run_dir = trained_run
    for name in (
        "summary.json", "runlog.json", "run.log", "report.html", "results.xlsx", "config_snapshot.yaml",
        "replay_manifest.json", "performance_matrix_mae.csv", "checkpoints/regime_1.json",
        "checkpoints/regime_2.json", "graphs/after_regime_2/regime_1_mean.csv",
        "tables/training_history.csv", "tables/forecasts_regime_1.csv", "memory/structure_regime_1.csv",
    ):
        assert (run_dir / name).exists(), name
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["regime_1"]["mae"]["AF"] is None
    assert summary["regime_2"]["mae"]["AF"] is not None
    manifest = json.loads((run_dir / "replay_manifest.json").read_text())
    assert [r["regime_id"] for r in manifest["regimes"]] == ["regime_1", "regime_2"]
    assert not (run_dir / "FAILED").exists()


def test_evaluate_reproduces_training_row_without_manifest(trained_run):
    root, _, run_dir = trained_run
    matrix = pd.read_csv(run_dir / "performance_matrix_mae.csv", index_col=0)
    args = [
        "evaluate", "--config", str(run_dir / "config_snapshot.yaml"),
        "--checkpoint", str(run_dir / "checkpoints" / "regime_2.json"),
    ]
    assert main(args + ["--out", str(root / "eval_a")]) == 0
    first = json.loads((root / "eval_a" / "evaluation.json").read_text())
    for regime_id in ("regime_1", "regime_2"):
        assert first["metrics"][regime_id]["mae"] == pytest.approx(matrix.loc["after_regime_2", regime_id], abs=1e-9)

    (run_dir / "replay_manifest.json").rename(run_dir / "replay_manifest.json.bak")
    try:
        assert main(args + ["--out", str(root / "eval_b"), "--dump-graphs"]) == 0
    finally:
        (run_dir / "replay_manifest.json.bak").rename(run_dir / "replay_manifest.json")
    second = json.loads((root / "eval_b" / "evaluation.json").read_text())
    assert second["metrics"] == first["metrics"]
    assert (root / "eval_b" / "graphs" / "regime_1_mean.csv").exists()


def test_same_seed_gives_identical_summary(trained_run, tmp_path):
    _, config, run_dir = trained_run
    again = tmp_path / "again"
    assert main(["train", "--config", str(config), "--out", str(again), "--no-report"]) == 0
    assert (again / "summary.json").read_text() == (run_dir / "summary.json").read_text()


def test_replay_select_on_one_regime(trained_run, tmp_path):
    _, config, run_dir = trained_run
    assert main(["generate", "--config", str(config), "--out", str(tmp_path / "data")]) == 0
    args = [
        "replay-select", "--config", str(config), "--checkpoint", str(run_dir / "checkpoints" / "regime_1.json"),
        "--regime", str(tmp_path / "data" / "regime_1"), "--out", str(tmp_path / "sel"),
    ]
    assert main(args) == 0
    payload = json.loads((tmp_path / "sel" / "replay_selection_regime_1.json").read_text())
    assert 1 <= len(payload["selected_window_ids"]) <= payload["budget"]
    assert payload["candidates"]


def test_train_failure_leaves_marker(tmp_path, monkeypatch):
    import skicl.trainer as trainer

    def boom(*args, **kwargs):
        raise FloatingPointError("loss became NaN")

    monkeypatch.setattr(trainer, "train_regime", boom)
    config = write_config(tmp_path, n_regimes=1, epochs=1)
    assert main(["train", "--config", str(config), "--out", str(tmp_path / "run")]) == 1
    assert "failed_regime: regime_1" in (tmp_path / "run" / "FAILED").read_text()


def test_invalid_configuration_exits_nonzero(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"trainer": {"learning_rate": 0.1}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "run")]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert main(["train", "--config", str(bad), "--budget", "0"]) == 1
