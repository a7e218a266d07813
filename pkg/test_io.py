"""Tests for regime directories, checkpoints and run outputs."""
import json

import numpy as np
import pandas as pd
import pytest

from skicl.config import ConfigError, DataValidationError, SyntheticConfig
from skicl.forecaster import SkiclModel
from skicl.io import (
    create_runlog,
    load_checkpoint,
    load_regime_csv,
    save_checkpoint,
    save_regime_dir,
    write_outputs,
)
from skicl.synthetic import generate_synthetic


def write_regime(root, structure, mask=None, data=None, meta=None):
    root.mkdir(parents=True, exist_ok=True)
    n = len(structure)
    frame = pd.DataFrame(data if data is not None else np.random.default_rng(0).normal(size=(40, n)),
                         columns=[f"v{i}" for i in range(n)])
    frame.to_csv(root / "data.csv", index=False)
    pd.DataFrame(structure).to_csv(root / "structure.csv", header=False, index=False)
    if mask is not None:
        pd.DataFrame(mask).to_csv(root / "mask.csv", header=False, index=False)
    (root / "meta.json").write_text(json.dumps(meta or {"edge_kind": "binary", "regime_name": root.name}))
    return root


def test_round_trip_preserves_values(tmp_path):
    regimes = generate_synthetic(SyntheticConfig(n_vars=4, total_steps=200, n_regimes=2, seed=1))
    for regime in regimes:
        loaded = load_regime_csv(str(save_regime_dir(regime, str(tmp_path / regime.regime_id))))
        assert loaded.regime_id == regime.regime_id
        assert np.allclose(loaded.values, regime.values, atol=1e-12, rtol=0)
        assert np.array_equal(loaded.prior.adjacency, regime.prior.adjacency)
        assert np.allclose(loaded.ground_truth, regime.ground_truth, atol=1e-12, rtol=0)
        assert loaded.variable_names == regime.variable_names


def test_missing_mask_means_fully_observed(tmp_path):
    regime = load_regime_csv(str(write_regime(tmp_path / "a", np.eye(3))))
    assert np.all(regime.prior.mask == 1)
    assert regime.variable_names == ["v0", "v1", "v2"]


def test_partial_mask_is_loaded(tmp_path):
    mask = np.ones((3, 3))
    mask[0, 2] = 0
    regime = load_regime_csv(str(write_regime(tmp_path / "a", np.eye(3), mask=mask)))
    assert regime.prior.observed_count == 8


def test_binary_structure_with_fraction_fails(tmp_path):
    structure = np.eye(3)
    structure[0, 1] = 0.5
    with pytest.raises(DataValidationError, match="structure.csv"):
        load_regime_csv(str(write_regime(tmp_path / "a", structure)))


def test_non_numeric_cell_reports_line(tmp_path):
    data = np.random.default_rng(0).normal(size=(10, 2)).astype(object)
    data[4, 1] = "oops"
    with pytest.raises(DataValidationError, match="line 6"):
        load_regime_csv(str(write_regime(tmp_path / "a", np.eye(2), data=data)))


def test_structure_size_mismatch(tmp_path):
    root = write_regime(tmp_path / "a", np.eye(3))
    pd.DataFrame(np.eye(2)).to_csv(root / "structure.csv", header=False, index=False)
    with pytest.raises(DataValidationError, match="3x3"):
        load_regime_csv(str(root))


def test_missing_meta(tmp_path):
    root = write_regime(tmp_path / "a", np.eye(2))
    (root / "meta.json").unlink()
    with pytest.raises(DataValidationError, match="meta.json"):
        load_regime_csv(str(root))


def test_checkpoint_round_trip(tmp_path, model_config):
    model = SkiclModel(model_config, seed=3)
    x = np.random.default_rng(0).normal(size=(2, 3, 8))
    model.eval()
    expected = model(x).prediction.numpy()
    path = save_checkpoint(tmp_path / "ckpt.json", model, 1, ["a", "b"])
    restored, meta = load_checkpoint(str(path))
    assert meta["regime_index"] == 1 and meta["regime_ids"] == ["a", "b"]
    assert not restored.training
    assert np.array_equal(restored(x).prediction.numpy(), expected)


def test_checkpoint_file_lists_named_parameters(tmp_path, model_config):
    model = SkiclModel(model_config, seed=3)
    path = save_checkpoint(tmp_path / "ckpt.json", model, 0, ["a"])
    payload = json.loads(path.read_text())
    assert payload["format_version"] == "skicl/1"
    assert isinstance(payload["params"], list)
    assert isinstance(payload["buffers"], list)
    params = model.named_parameters()
    assert [entry["name"] for entry in payload["params"]] == list(params)
    for entry in payload["params"]:
        assert set(entry) == {"name", "shape", "values"}
        expected = params[entry["name"]].data
        assert entry["shape"] == list(expected.shape)
        assert entry["values"] == expected.reshape(-1).tolist()


def test_checkpoint_with_keyed_params_is_rejected(tmp_path, model_config):
    path = save_checkpoint(tmp_path / "ckpt.json", SkiclModel(model_config), 0, ["a"])
    payload = json.loads(path.read_text())
    payload["params"] = {e["name"]: {"shape": e["shape"], "values": e["values"]} for e in payload["params"]}
    path.write_text(json.dumps(payload))
    with pytest.raises(ConfigError):
        load_checkpoint(str(path))


def test_checkpoint_missing(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(str(tmp_path / "nope.json"))


def test_write_outputs_layout(tmp_path):
    from datetime import datetime

    matrix = pd.DataFrame([[1.0, np.nan], [2.0, 3.0]], index=["after_a", "after_b"], columns=["a", "b"])
    tables = {"performance_matrix_mae": matrix, "training_history": pd.DataFrame({"epoch": [1, 2]})}
    now = datetime.now()
    runlog = create_runlog("train", str(tmp_path), {"trainer": {"lambda": 1.0}}, [], {}, now, now)
    paths = write_outputs(str(tmp_path), tables, "<html></html>", runlog, {"b": {"mae": {"AP": 2.5, "AF": 1.0}}})
    assert (tmp_path / "performance_matrix_mae.csv").exists()
    assert (tmp_path / "tables" / "training_history.csv").exists()
    assert (tmp_path / "results.xlsx").exists()
    assert json.loads((tmp_path / "summary.json").read_text())["b"]["mae"]["AF"] == 1.0
    assert json.loads((tmp_path / "runlog.json").read_text())["command"] == "train"
    assert "report" in paths
