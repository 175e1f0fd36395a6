import json
import os
import subprocess
import sys

import pytest
from conftest import SMALL_DDOS, SMALL_SPAM

from botdetect import __version__
from botdetect.cli import main
from botdetect.matrix import FeatureMatrix
from botdetect.synth import SynthParams


def _params_file(tmp_path, params: SynthParams, name: str) -> str:
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(params.to_dict()))
    return str(path)


def _synth(tmp_path, params, name):
    out = tmp_path / name
    assert main(["synth", "--params", _params_file(tmp_path, params, name),
                 "--out", str(out)]) == 0
    return out


def _tree(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


@pytest.fixture(scope="module")
def scenarios(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("scen")
    dirs = {}
    for i, sid in enumerate(("1", "2", "9")):
        p = SynthParams(**{**SMALL_SPAM.to_dict(), "scenario_id": sid, "seed": 70 + i})
        dirs[sid] = _synth(tmp, p, f"s{sid}")
    return tmp, dirs


def test_version():
    out = subprocess.run([sys.executable, "-m", "botdetect", "--version"],
                         capture_output=True, text=True, check=True)
    assert __version__ in out.stdout


def test_synth_writes_inputs(tmp_path):
    out = _synth(tmp_path, SMALL_DDOS, "d")
    assert sorted(os.listdir(out)) == ["conn.log", "manifest.txt", "params.json"]
    assert "victim_ips" in (out / "manifest.txt").read_text()


def test_synth_unknown_preset(tmp_path, capsys):
    assert main(["synth", "--preset", "nope", "--out", str(tmp_path / "x")]) == 2
    assert "unknown preset" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_featurize_traffic_csv(scenarios, tmp_path, capsys):
    _, dirs = scenarios
    out = tmp_path / "f.csv"
    schema = tmp_path / "schema.csv"
    assert main(["featurize", "--scenario-dir", str(dirs["1"]), "--rep", "traffic",
                 "--window", "30", "--out", str(out), "--schema", str(schema)]) == 0
    lines = out.read_text().splitlines()
    header = json.loads(lines[0][2:])
    assert header["representation"] == "traffic" and header["window_len"] == 30.0
    assert lines[1].startswith("scenario,entity,window,") and lines[1].endswith(",label")
    m = FeatureMatrix.read_csv(str(out))
    assert m.n_features == 726
    assert len(schema.read_text().splitlines()) == 726 + 2
    assert "rows=" in capsys.readouterr().out


def test_featurize_connection_row_count(scenarios, tmp_path):
    _, dirs = scenarios
    out = tmp_path / "c.csv"
    assert main(["featurize", "--scenario-dir", str(dirs["2"]), "--rep", "connection",
                 "--out", str(out)]) == 0
    with open(dirs["2"] / "conn.log") as fh:
        n_records = sum(1 for line in fh if not line.startswith("#"))
    # Every synthetic record touches an internal host.
    assert FeatureMatrix.read_csv(str(out)).n_rows == n_records


def test_featurize_missing_manifest(scenarios, tmp_path, capsys):
    _, dirs = scenarios
    missing = tmp_path / "none.txt"
    code = main(["featurize", "--log", str(dirs["1"] / "conn.log"), "--manifest", str(missing),
                 "--out", str(tmp_path / "f.csv")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_featurize_stage_failure(scenarios, tmp_path, capsys):
    _, dirs = scenarios
    code = main(["featurize", "--scenario-dir", str(dirs["1"]), "--labeling", "fine",
                 "--out", str(tmp_path / "f.csv")])
    assert code == 1
    assert "[featurize]" in capsys.readouterr().err
    assert not (tmp_path / "f.csv").exists()


def test_label(scenarios, tmp_path):
    _, dirs = scenarios
    out = tmp_path / "labels.csv"
    assert main(["label", "--scenario-dir", str(dirs["1"]), "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[1] == "line,ts,orig_h,dest_h,label"
    assert any(r.endswith(",1") for r in rows[2:])


def test_train_and_importance(scenarios, tmp_path, capsys):
    _, dirs = scenarios
    feats = []
    for sid in ("1", "2"):
        f = tmp_path / f"{sid}.csv"
        assert main(["featurize", "--scenario-dir", str(dirs[sid]), "--out", str(f)]) == 0
        feats.append(str(f))
    model = tmp_path / "model.json"
    assert main(["train", *feats, "--family", "rf", "--param", "n_trees=5",
                 "--out", str(model)]) == 0
    imp = tmp_path / "imp.csv"
    assert main(["importance", str(model), "--top", "5", "--out", str(imp)]) == 0
    lines = imp.read_text().splitlines()
    assert lines[1] == "rank,feature,importance" and len(lines) == 7
    assert main(["train", *feats, "--family", "lr", "--grid", '{"l1_strength": [0.01, 0.1]}',
                 "--folds", "2", "--out", str(tmp_path / "lr.json")]) == 0
    assert "cv_f1=" in capsys.readouterr().out


def _config(tmp, dirs, **extra):
    cfg = {"botnet": "spam", "scenarios": {k: str(v) for k, v in dirs.items()},
           "representation": "traffic", "window_len": 30,
           "params": {"family": "random_forest", "n_trees": 5}}
    cfg.update(extra)
    path = tmp / "experiment.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_experiment_outputs_and_determinism(scenarios, tmp_path):
    tmp, dirs = scenarios
    cfg = _config(tmp_path, dirs)
    out = tmp_path / "exp"
    assert main(["experiment", cfg, "--test", "1", "--out", str(out)]) == 0
    first = _tree(out)
    name = "spam_traffic_coarse_random_forest_T30_test1"
    assert {f"{name}/report.json", f"{name}/report.csv", f"{name}/pr_curve.csv",
            f"{name}/importance.csv", "summary.csv"} == set(first)
    report = json.loads(first[f"{name}/report.json"])
    assert report["config"]["experiment"]["test_scenario"] == "1"
    assert main(["experiment", cfg, "--test", "1", "--out", str(out)]) == 0
    assert _tree(out) == first


def test_sweep_outputs(scenarios, tmp_path):
    _, dirs = scenarios
    out = tmp_path / "sweep"
    assert main(["sweep", _config(tmp_path, dirs), "--test", "2", "--windows", "30,60",
                 "--out", str(out)]) == 0
    table = (out / "f1_by_window.csv").read_text().splitlines()
    assert table[1] == "test_scenario,window_len,f1" and len(table) == 4
    assert len((out / "summary.csv").read_text().splitlines()) == 4


def test_experiment_missing_input(tmp_path, capsys):
    cfg = {"scenarios": {"1": str(tmp_path / "a"), "2": str(tmp_path / "b")}}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["experiment", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "conn.log" in capsys.readouterr().err


def test_default_output_dir_from_environment(scenarios, tmp_path, monkeypatch):
    _, dirs = scenarios
    monkeypatch.setenv("BOTDETECT_OUTPUT", str(tmp_path))
    assert main(["label", "--scenario-dir", str(dirs["9"])]) == 0
    assert (tmp_path / "labels.csv").exists()
