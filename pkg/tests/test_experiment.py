import json
from dataclasses import replace

import numpy as np
import pytest

from botdetect.experiment import (
    EvalReport,
    ExperimentError,
    ExperimentSpec,
    MatrixCache,
    SplitError,
    f1_by_window,
    leave_one_out,
    reports_csv,
    run_experiment,
    run_many,
    scenario_split,
    window_sweep,
)
from botdetect.features import featurize_dataset
from botdetect.matrix import FeatureMatrix, SchemaMismatchError
from botdetect.metrics import classification_metrics
from botdetect.models import HyperParams, predict_proba, train
from botdetect.synth import SynthParams, generate_records

IDS = ("1", "2", "9")
FAST = HyperParams("random_forest", n_trees=10)


@pytest.fixture(scope="module")
def data():
    out = {}
    for i, sid in enumerate(IDS):
        p = SynthParams("spam", sid, duration_s=600, n_bots=1, n_background_hosts=60,
                        imbalance=0.02, seed=50 + i, t_start=1.3e9 + 1e5 * i)
        out[sid] = generate_records(p)
    return out


def _matrix(sid, n, cols=("a", "b")):
    X = np.arange(n * len(cols), dtype=float).reshape(n, len(cols))
    return FeatureMatrix(cols, X, np.arange(n) % 2, [(sid, "h", i) for i in range(n)])


def test_split_trains_on_the_other_scenarios():
    mats = {s: _matrix(s, 4) for s in IDS}
    tr, te = scenario_split(mats, "1")
    assert {k[0] for k in tr.keys} == {"2", "9"}
    assert {k[0] for k in te.keys} == {"1"}
    assert not set(tr.keys) & set(te.keys)


def test_split_unknown_id():
    with pytest.raises(SplitError):
        scenario_split({s: _matrix(s, 2) for s in IDS}, "7")


def test_split_schema_mismatch():
    mats = {"1": _matrix("1", 2), "2": _matrix("2", 2, ("a", "c"))}
    with pytest.raises(SchemaMismatchError, match="column 1"):
        scenario_split(mats, "1")


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("x", IDS, "7")
    spec = ExperimentSpec("Rbot", ("4", "10", "11"), "10")
    assert spec.train_scenarios == ("4", "11")
    assert ExperimentSpec.from_dict(spec.to_dict()) == spec


def test_run_is_deterministic(data):
    spec = ExperimentSpec("spam", IDS, "1", params=FAST)
    a, b = run_experiment(spec, data), run_experiment(spec, data)
    assert a.to_json() == b.to_json()
    a.check()


def test_report_contents(data):
    r = run_experiment(ExperimentSpec("spam", IDS, "2", params=FAST), data)
    assert r.config["experiment"]["test_scenario"] == "2"
    assert sum(r.test_counts.values()) == r.tp + r.fp + r.tn + r.fn
    assert abs(sum(v for _, v in r.importance) - 1.0) <= 1e-9
    back = EvalReport.from_dict(json.loads(r.to_json()))
    assert back.to_json() == r.to_json()
    assert r.pr_points[0][0] == float("inf")


def test_report_metrics_match_direct_computation(data):
    spec = ExperimentSpec("spam", IDS, "9", params=FAST)
    report = run_experiment(spec, data)
    mats = {s: featurize_dataset(*data[s]) for s in IDS}
    tr, te = scenario_split(mats, "9")
    m = classification_metrics(te.y, predict_proba(train(tr, FAST), te))
    assert (report.tp, report.fp, report.fn, report.f1) == (m.tp, m.fp, m.fn, m.f1)


def test_missing_scenario_is_a_load_error(data):
    with pytest.raises(ExperimentError) as err:
        run_experiment(ExperimentSpec("spam", IDS + ("5",), "1"), data)
    assert err.value.stage == "load"


def test_stage_tag_on_featurize_failure(data):
    spec = ExperimentSpec("spam", IDS, "1", labeling="fine", params=FAST)
    with pytest.raises(ExperimentError) as err:
        run_experiment(spec, data)
    assert err.value.stage == "featurize" and "fine labeling unavailable" in str(err.value)


def test_leave_one_out_and_sweep_shapes(data):
    spec = ExperimentSpec("spam", IDS, "1", params=FAST)
    cache = MatrixCache()
    loo = leave_one_out(spec, data, cache)
    assert [r.config["experiment"]["test_scenario"] for r in loo] == list(IDS)
    single = window_sweep(spec, data, [60], cache)
    assert len(single) == 1 and single[0].config["experiment"]["window_len"] == 60.0
    table = f1_by_window(loo + single)
    assert table.splitlines()[0] == "test_scenario,window_len,f1"
    assert len(reports_csv(loo).splitlines()) == 4
    with pytest.raises(ValueError):
        window_sweep(spec, data, [0])


def test_parallel_matches_serial(data):
    spec = ExperimentSpec("spam", IDS, "1", params=FAST)
    specs = [spec, replace(spec, test_scenario="2")]
    serial = run_many(specs, data, jobs=1)
    parallel = run_many(specs, data, jobs=2)
    assert [r.to_json() for r in serial] == [r.to_json() for r in parallel]
