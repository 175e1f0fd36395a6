"""Botnet detection from Zeek conn.log records.

Pipeline: parse conn.log records, label them from a scenario manifest,
aggregate them into per-host time-window features, train a classifier and
evaluate it on a held-out scenario.
"""

__version__ = "0.1.0"

from .experiment import (  # noqa: E402
    EvalReport,
    ExperimentError,
    ExperimentSpec,
    leave_one_out,
    run_experiment,
    scenario_split,
    window_sweep,
)
from .features import WindowConfig, WindowFeaturizer, featurize_dataset  # noqa: E402
from .ingest import ConnRecord, ScenarioSpec, parse_conn_log, parse_scenario_spec  # noqa: E402
from .labeling import Label, label_records  # noqa: E402
from .matrix import FeatureMatrix  # noqa: E402
from .metrics import classification_metrics, pr_curve, roc_auc  # noqa: E402
from .models import (  # noqa: E402
    GradientBoosting,
    HyperParams,
    L1LogisticRegression,
    RandomForest,
    predict_proba,
    train,
)
from .synth import SynthParams, gen_scenario  # noqa: E402

__all__ = [
    "ConnRecord", "EvalReport", "ExperimentError", "ExperimentSpec", "FeatureMatrix",
    "GradientBoosting", "HyperParams", "L1LogisticRegression", "Label", "RandomForest",
    "ScenarioSpec", "SynthParams", "WindowConfig", "WindowFeaturizer",
    "classification_metrics", "featurize_dataset", "gen_scenario", "label_records",
    "leave_one_out", "parse_conn_log", "parse_scenario_spec", "pr_curve", "predict_proba",
    "roc_auc", "run_experiment", "scenario_split", "train", "window_sweep",
]
