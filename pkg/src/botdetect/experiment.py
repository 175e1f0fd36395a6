"""Leave-one-scenario-out experiments, window sweeps and evaluation reports.

Each aggregated row (host, window) is one prediction unit. Training uses
every scenario except the held-out one, which is scored once at threshold
0.5.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .features import REPRESENTATIONS, WindowConfig, featurize_dataset
from .ingest import ConnRecord, ScenarioSpec, read_conn_log, read_scenario_spec
from .labeling import REGIMES
from .matrix import FeatureMatrix, SchemaMismatchError, first_schema_difference
from .metrics import MetricError, classification_metrics, pr_curve, prf_from_counts, roc_auc
from .models import HyperParams, feature_importance, predict_proba, train

STAGES = ("load", "featurize", "split", "train", "score", "metrics")
REPORT_FORMAT = "botdetect.report"

CSV_FIELDS = (
    "botnet", "test_scenario", "train_scenarios", "representation", "window_len",
    "labeling", "family", "seed", "tp", "fp", "tn", "fn", "precision", "recall", "f1",
    "roc_auc", "pr_auc", "test_pos", "test_neg",
)


class ExperimentError(RuntimeError):
    """A pipeline failure tagged with the stage it happened in."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    """One train/test configuration.

    Parameters
    ----------
    botnet : str
        Free-form label, e.g. ``"Neris"``.
    scenarios : tuple of str
        All scenario ids of the botnet; at least two.
    test_scenario : str
        Held-out id; the remaining scenarios are concatenated for training.
    representation : {"connection", "traffic", "traffic+temporal"}
    window_len : float
        Aggregation window in seconds (ignored by ``"connection"`` except for
        row keys).
    labeling : {"coarse", "fine"}
    params : HyperParams
    """

    botnet: str
    scenarios: tuple[str, ...]
    test_scenario: str
    representation: str = "traffic"
    window_len: float = 30.0
    labeling: str = "coarse"
    params: HyperParams = field(default_factory=lambda: HyperParams("random_forest"))

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(str(s) for s in self.scenarios))
        object.__setattr__(self, "test_scenario", str(self.test_scenario))
        if len(self.scenarios) < 2:
            raise ValueError("an experiment needs at least two scenarios")
        if len(set(self.scenarios)) != len(self.scenarios):
            raise ValueError("duplicate scenario ids")
        if self.test_scenario not in self.scenarios:
            raise ValueError(f"test scenario {self.test_scenario!r} not in {list(self.scenarios)}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.labeling not in REGIMES:
            raise ValueError(f"unknown labeling regime {self.labeling!r}")
        if not self.window_len > 0:
            raise ValueError("window_len must be > 0")

    @property
    def train_scenarios(self) -> tuple[str, ...]:
        return tuple(s for s in self.scenarios if s != self.test_scenario)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenarios"] = list(self.scenarios)
        d["params"] = self.params.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentSpec":
        d = dict(d)
        params = d.pop("params", None) or {"family": "random_forest"}
        if not isinstance(params, HyperParams):
            params = HyperParams.from_dict(params)
        d["scenarios"] = tuple(d["scenarios"])
        return cls(params=params, **d)

    def splits(self) -> list["ExperimentSpec"]:
        """One spec per held-out scenario, in scenario order."""
        return [replace(self, test_scenario=s) for s in self.scenarios]


@dataclass
class EvalReport:
    """Metrics of one experiment plus the configuration that produced them.

    ``roc_auc`` and ``pr_auc`` are None when the test scenario holds a single
    class.
    """

    config: dict
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    roc_auc: float | None
    pr_auc: float | None
    pr_points: list = field(default_factory=list)
    importance: list = field(default_factory=list)
    train_counts: dict = field(default_factory=dict)
    test_counts: dict = field(default_factory=dict)

    def check(self) -> None:
        n_test = sum(self.test_counts.values())
        if self.tp + self.fp + self.tn + self.fn != n_test:
            raise ValueError("confusion counts do not sum to the test rows")
        if prf_from_counts(self.tp, self.fp, self.fn) != (self.precision, self.recall, self.f1):
            raise ValueError("stored P/R/F1 disagree with the confusion counts")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = REPORT_FORMAT
        d["train_counts"] = {str(k): v for k, v in self.train_counts.items()}
        d["test_counts"] = {str(k): v for k, v in self.test_counts.items()}
        # The curve's first point has an infinite threshold; JSON has no inf.
        d["pr_points"] = [[None if t == float("inf") else t, r, p] for t, r, p in self.pr_points]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        d = dict(d)
        d.pop("format", None)
        d["train_counts"] = {int(k): v for k, v in d.get("train_counts", {}).items()}
        d["test_counts"] = {int(k): v for k, v in d.get("test_counts", {}).items()}
        d["pr_points"] = [(float("inf") if t is None else t, r, p)
                          for t, r, p in d.get("pr_points", [])]
        d["importance"] = [tuple(p) for p in d.get("importance", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def csv_row(self) -> dict:
        cfg = self.config["experiment"]
        return {
            "botnet": cfg["botnet"],
            "test_scenario": cfg["test_scenario"],
            "train_scenarios": ";".join(s for s in cfg["scenarios"] if s != cfg["test_scenario"]),
            "representation": cfg["representation"],
            "window_len": cfg["window_len"],
            "labeling": cfg["labeling"],
            "family": cfg["params"]["family"],
            "seed": cfg["params"]["seed"],
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "roc_auc": "" if self.roc_auc is None else self.roc_auc,
            "pr_auc": "" if self.pr_auc is None else self.pr_auc,
            "test_pos": self.test_counts.get(1, 0),
            "test_neg": self.test_counts.get(0, 0),
        }

    def pr_csv(self) -> str:
        lines = ["threshold,recall,precision"]
        lines += [f"{t!r},{r!r},{p!r}" for t, r, p in self.pr_points]
        return "\n".join(lines) + "\n"

    def importance_csv(self) -> str:
        lines = ["rank,feature,importance"]
        lines += [f"{i + 1},{name},{value!r}" for i, (name, value) in enumerate(self.importance)]
        return "\n".join(lines) + "\n"


def reports_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow({k: _csv_value(v) for k, v in r.csv_row().items()})
    return buf.getvalue()


def _csv_value(v):
    return repr(v) if isinstance(v, float) else v


# -- data ----------------------------------------------------------------------

Scenario = tuple[Sequence[ConnRecord], ScenarioSpec]


def load_scenario(directory=None, log_path=None, manifest_path=None) -> Scenario:
    """Read ``conn.log`` and ``manifest.txt`` from a directory, or explicit paths."""
    if directory is not None:
        log_path = log_path or os.path.join(directory, "conn.log")
        manifest_path = manifest_path or os.path.join(directory, "manifest.txt")
    for path in (log_path, manifest_path):
        if path is None or not os.path.exists(path):
            raise FileNotFoundError(f"missing input file: {path}")
    spec = read_scenario_spec(manifest_path)
    return list(read_conn_log(log_path)), spec


def featurize_scenario(scenario: Scenario, representation: str, window_len: float,
                       labeling: str) -> FeatureMatrix:
    records, spec = scenario
    return featurize_dataset(records, spec, representation,
                             WindowConfig(window_len, spec.t_start), labeling=labeling)


class MatrixCache:
    """Feature matrices keyed by scenario and featurization settings."""

    def __init__(self):
        self._store: dict[tuple, FeatureMatrix] = {}

    def get(self, scenario_id: str, scenario: Scenario, representation: str,
            window_len: float, labeling: str) -> FeatureMatrix:
        key = (scenario_id, representation, float(window_len), labeling)
        if key not in self._store:
            self._store[key] = featurize_scenario(scenario, representation, window_len, labeling)
        return self._store[key]

    def __len__(self) -> int:
        return len(self._store)


def scenario_split(matrices: Mapping[str, FeatureMatrix], test_id: str
                   ) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Concatenate all scenarios but ``test_id`` for training; hold out ``test_id``."""
    test_id = str(test_id)
    if test_id not in matrices:
        raise SplitError(f"unknown test scenario {test_id!r}; have {sorted(matrices)}")
    if len(matrices) < 2:
        raise SplitError("need at least two scenarios")
    ref = matrices[test_id].columns
    for sid, m in matrices.items():
        if m.columns != ref:
            raise SchemaMismatchError(
                f"scenario {sid!r} schema differs at " + first_schema_difference(ref, m.columns))
    train_parts = [m for sid, m in matrices.items() if sid != test_id]
    return FeatureMatrix.concat(train_parts), matrices[test_id]


# -- running -------------------------------------------------------------------

def _stage(name):
    def wrap(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ExperimentError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with stage tag
            raise ExperimentError(name, f"{type(exc).__name__}: {exc}") from exc
    return wrap


def _counts(m: FeatureMatrix) -> dict[int, int]:
    c = m.class_counts()
    return {0: int(c.get(0, 0)), 1: int(c.get(1, 0))}


def _scenario_digest(scenario: Scenario) -> dict:
    records, spec = scenario
    return {"records": len(records), "t_start": spec.t_start, "t_end": spec.t_end,
            "botnet_ips": sorted(spec.botnet_ips), "victim_ips": sorted(spec.victim_ips)}


def run_experiment(spec: ExperimentSpec, data: Mapping[str, Scenario],
                   cache: MatrixCache | None = None) -> EvalReport:
    """Featurize, label, split, train, score and evaluate one configuration.

    Errors from any stage are re-raised as :class:`ExperimentError` naming
    the stage.
    """
    missing = [s for s in spec.scenarios if s not in data]
    if missing:
        raise ExperimentError("load", f"scenario(s) not provided: {', '.join(missing)}")
    cache = cache if cache is not None else MatrixCache()
    featurize = _stage("featurize")
    matrices = {sid: featurize(cache.get, sid, data[sid], spec.representation,
                               spec.window_len, spec.labeling)
                for sid in spec.scenarios}
    train_m, test_m = _stage("split")(scenario_split, matrices, spec.test_scenario)
    if test_m.n_rows == 0:
        raise ExperimentError("split", f"test scenario {spec.test_scenario!r} has no rows")
    if len(set(train_m.y.tolist())) < 2:
        raise ExperimentError("train", "training rows hold a single class")
    model = _stage("train")(train, train_m, spec.params)
    scores = _stage("score")(predict_proba, model, test_m)
    return _stage("metrics")(_report, spec, data, model, train_m, test_m, scores)


def _report(spec, data, model, train_m, test_m, scores) -> EvalReport:
    y = test_m.y
    cm = classification_metrics(y, scores, 0.5)
    try:
        auc = roc_auc(y, scores)
        curve = pr_curve(y, scores)
        pr_auc, points = curve.auc, list(zip(curve.thresholds.tolist(), curve.recall.tolist(),
                                             curve.precision.tolist()))
    except MetricError:
        auc, pr_auc, points = None, None, []
    ranking = feature_importance(model)
    config = {
        "experiment": spec.to_dict(),
        "schema_fingerprint": model.fingerprint,
        "n_features": len(model.columns),
        "scenarios": {sid: _scenario_digest(data[sid]) for sid in spec.scenarios},
    }
    report = EvalReport(
        config=config, tp=cm.tp, fp=cm.fp, tn=cm.tn, fn=cm.fn,
        precision=cm.precision, recall=cm.recall, f1=cm.f1,
        roc_auc=auc, pr_auc=pr_auc, pr_points=points,
        importance=ranking,
        train_counts=_counts(train_m), test_counts=_counts(test_m),
    )
    return report


def leave_one_out(spec: ExperimentSpec, data: Mapping[str, Scenario],
                  cache: MatrixCache | None = None, jobs: int = 1) -> list[EvalReport]:
    """One report per held-out scenario."""
    return run_many(spec.splits(), data, cache, jobs)


def window_sweep(spec: ExperimentSpec, data: Mapping[str, Scenario],
                 windows: Sequence[float], cache: MatrixCache | None = None,
                 jobs: int = 1) -> list[EvalReport]:
    """One report per window length, in the given order."""
    windows = [float(w) for w in windows]
    if not windows:
        raise ValueError("no window lengths given")
    if any(not w > 0 for w in windows):
        raise ValueError("window lengths must be > 0")
    return run_many([replace(spec, window_len=w) for w in windows], data, cache, jobs)


def _run_one(args):
    spec, data = args
    return run_experiment(spec, data)


def run_many(specs: Sequence[ExperimentSpec], data: Mapping[str, Scenario],
             cache: MatrixCache | None = None, jobs: int = 1) -> list[EvalReport]:
    """Run independent experiments, optionally in ``jobs`` worker processes.

    Results keep the order of ``specs`` whatever the worker count.
    """
    if jobs is None or jobs <= 1 or len(specs) <= 1:
        cache = cache if cache is not None else MatrixCache()
        return [run_experiment(s, data, cache) for s in specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, [(s, data) for s in specs]))


def f1_by_window(reports: Sequence[EvalReport]) -> str:
    """CSV of (test scenario, window, F1), the data behind an F1-vs-window plot."""
    lines = ["test_scenario,window_len,f1"]
    for r in reports:
        cfg = r.config["experiment"]
        lines.append(f"{cfg['test_scenario']},{cfg['window_len']!r},{r.f1!r}")
    return "\n".join(lines) + "\n"


def mean_f1(reports: Sequence[EvalReport]) -> float:
    return float(np.mean([r.f1 for r in reports])) if reports else 0.0
