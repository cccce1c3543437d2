import json

import numpy as np
import pytest

from survloco import cli
from survloco.dataset import load_csv, load_schema

SYNTH = {"n_samples": 80, "n_features": 8, "informative": [0, 3], "coefficients": [1.0, 0.8],
         "conventional": [0, 1], "target_censoring": 0.5, "dropout_rate": 0.1}
FAST = {
    "synth": SYNTH,
    "loco": {"K": 60},
    "stability": {"B": 3, "P": 3, "permute": 1, "k_max": 4,
                  "rf_imp": {"n_trees": 10, "min_leaf": 3, "mtry": None}},
    "cv": {"repeats": 2, "folds": 3, "k": 2, "k_list": [1, 2], "ablations": [["x1"]],
           "model": {"kind": "forest", "n_trees": 10, "min_leaf": 3, "mtry": None, "lam": None}},
    "backend": {"kind": "forest", "n_trees": 5, "min_leaf": 3},
}


def run(tmp_path, command, config, *flags, name="out"):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / name
    code = cli.main([command, "--config", str(cfg), "--out-dir", str(out), *flags])
    return code, out


def error_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_synth_command_writes_dataset(tmp_path):
    code, out = run(tmp_path, "synth", FAST)
    assert code == 0
    ds = load_csv(out / "dataset.csv", load_schema(out / "schema.json"))
    assert ds.n_samples == 80 and list(ds.names_tagged("conventional")) == ["x1", "x2"]
    truth = json.loads((out / "ground_truth.json").read_text())
    assert truth["informative"] == ["x1", "x4"]
    assert truth["_meta"]["command"] == "synth"


def test_loco_on_csv_round_trip(tmp_path):
    run(tmp_path, "synth", FAST, name="data")
    cfg = {"data": {"csv": "data/dataset.csv", "schema": "data/schema.json"}, "loco": {"K": 60},
           "backend": {"kind": "cox_ridge"}, "features": "all"}
    code, out = run(tmp_path, "loco", cfg)
    assert code == 0
    rep = json.loads((out / "occlusion.json").read_text())
    assert len(rep["feature_names"]) == 8


@pytest.mark.parametrize("command", ["loco", "stability", "cv"])
def test_every_artifact_carries_metadata(tmp_path, command):
    code, out = run(tmp_path, command, FAST, "--seed", "4")
    assert code == 0
    files = sorted(out.iterdir())
    assert files
    for f in files:
        text = f.read_text()
        if f.suffix == ".json":
            meta = json.loads(text)["_meta"]
            assert meta["seed"] == 4 and meta["command"] == command and len(meta["config_hash"]) == 16
        else:
            assert "config_hash: " in text and "seed: 4" in text and "survloco_version: " in text
    if command == "cv":
        names = {f.name for f in files}
        assert {"topk_cindex.csv", "ablation_cindex.csv", "cindex_boxplot.svg"} <= names


@pytest.mark.parametrize("command", ["synth", "loco", "stability", "cv"])
def test_rerun_is_byte_identical_across_worker_counts(tmp_path, command):
    _, a = run(tmp_path, command, FAST, "--workers", "1", name="a")
    _, b = run(tmp_path, command, FAST, "--workers", "3", name="b")
    fa = sorted(p.name for p in a.iterdir())
    assert fa == sorted(p.name for p in b.iterdir())
    for n in fa:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_env_workers_and_flag_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    assert cli._workers(None) == 2 and cli._workers(1) == 1
    monkeypatch.setenv(cli.WORKERS_ENV, "many")
    with pytest.raises(cli.ConfigError):
        cli._workers(None)
    c = cli.RunConfig(FAST).override(seed=9, k=3, backend="cox_lasso", stratify=False,
                                     refit_loco_per_fold=True)
    assert c["seed"] == 9 and c["cv"]["k"] == 3 and c["backend"] == {"kind": "cox_lasso"}
    assert c["cv"]["model"]["kind"] == "cox_lasso"
    assert c["cv"]["stratify"] is False and c["cv"]["refit_loco_per_fold"] is True
    assert c.hash() != cli.RunConfig(FAST).hash()


def test_config_errors_exit_1(tmp_path, capsys):
    code, _ = run(tmp_path, "loco", {**FAST, "bogus": 1})
    assert code == 1 and error_json(capsys)["error"] == "ConfigError"
    code, _ = run(tmp_path, "loco", {**FAST, "loco": {"K": 0}})
    assert code == 1 and "loco.K" in error_json(capsys)["message"]
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["loco", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 1


def test_malformed_csv_exit_1_names_row_and_column(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("time,event,a,b\n1.0,1,0.5,0.1\n2.0,1,oops,0.2\n")
    code, _ = run(tmp_path, "loco", {"data": {"csv": "d.csv", "schema": {"time": "time", "event": "event", "dbm": ["a", "b"]}}})
    err = error_json(capsys)
    assert code == 1 and err["error"] == "DatasetError"
    assert err["row"] is not None and err["column"] == "a"


def test_censoring_saturation_exit_2(tmp_path, capsys):
    cfg = {**FAST, "synth": {**SYNTH, "n_samples": 60, "target_censoring": 0.97,
                             "dropout_rate": 0.0}, "features": "all"}
    code, out = run(tmp_path, "loco", cfg)
    err = error_json(capsys)
    assert code == 2 and err["error"] == "CensoringSaturationError"
    assert err["n_skipped"] > err["n_patches"] / 2
    assert not (out / "occlusion.csv").exists()


def test_synth_command_requires_synth_section(tmp_path, capsys):
    code, _ = run(tmp_path, "synth", {"loco": {"K": 10}})
    assert code == 1 and error_json(capsys)["error"] == "ConfigError"


def test_csv_metadata_is_skipped_when_reading(tmp_path):
    _, out = run(tmp_path, "synth", FAST)
    ds = load_csv(out / "dataset.csv", load_schema(out / "schema.json"))
    assert np.isfinite(ds.features).all()
