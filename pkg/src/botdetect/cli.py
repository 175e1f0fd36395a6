"""Command-line entry point: ``botdetect <subcommand> ...``.

Subcommands: synth, featurize, label, train, importance, experiment, sweep.
Experiments read a JSON config; command-line flags override its keys. The
default output directory comes from ``$BOTDETECT_OUTPUT`` (else ``.``).

Exit codes: 0 on success, 1 when a pipeline stage fails, 2 for bad usage or
missing inputs.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace

import numpy as np

from . import __version__
from .experiment import (
    ExperimentError,
    ExperimentSpec,
    MatrixCache,
    f1_by_window,
    featurize_scenario,
    load_scenario,
    reports_csv,
    run_many,
)
from .features import REPRESENTATIONS
from .ingest import ConnLogError, ManifestError
from .labeling import REGIMES, LabelingError, label_records
from .matrix import FeatureMatrix
from .models import (
    FAMILIES,
    HyperParams,
    feature_importance,
    grid_search,
    load_model,
    save_model,
    train,
)
from .synth import PRESETS, SynthError, SynthParams, preset, write_scenario

OUTPUT_ENV = "BOTDETECT_OUTPUT"
SWEEP_WINDOWS = (1, 10, 30, 60, 120, 240, 600)
FAMILY_ALIASES = {"rf": "random_forest", "gb": "gradient_boosting", "lr": "logreg"}

log = logging.getLogger("botdetect")


class UsageError(Exception):
    """Bad arguments or missing inputs (exit code 2)."""


# -- output helpers --------------------------------------------------------------

def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, ".")


def _header(config: dict) -> str:
    return "# " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n"


@contextlib.contextmanager
def staged_dir(final: str):
    """Yield a temp directory that replaces ``final`` only if the block succeeds."""
    final = os.path.abspath(final)
    parent = os.path.dirname(final)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".tmp-", dir=parent)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if os.path.isdir(final):
        shutil.rmtree(final)
    os.replace(tmp, final)


def write_atomic(path: str, text: str) -> None:
    path = os.path.abspath(path)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=os.path.dirname(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _resolve(path: str, base: str | None = None) -> str:
    if base and not os.path.isabs(path):
        path = os.path.join(base, path)
    return os.path.abspath(path)


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"missing {what}: {path}")
    return path


def _read_json(path: str) -> dict:
    _require_file(path, "config file")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {path}: {exc}") from exc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _params_from(args, base: dict | None = None) -> HyperParams:
    d = dict(base or {})
    if getattr(args, "family", None):
        d["family"] = FAMILY_ALIASES.get(args.family, args.family)
    d.setdefault("family", "random_forest")
    d["family"] = FAMILY_ALIASES.get(d["family"], d["family"])
    for item in getattr(args, "param", None) or []:
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        d[k.strip()] = _parse_value(v.strip())
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    try:
        return HyperParams.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad hyper-parameters: {exc}") from exc


def _scenario_paths(args) -> tuple[str, str]:
    if args.scenario_dir:
        log_path = args.log or os.path.join(args.scenario_dir, "conn.log")
        manifest = args.manifest or os.path.join(args.scenario_dir, "manifest.txt")
    else:
        if not args.log or not args.manifest:
            raise UsageError("give --scenario-dir, or both --log and --manifest")
        log_path, manifest = args.log, args.manifest
    return (_require_file(os.path.abspath(log_path), "conn.log"),
            _require_file(os.path.abspath(manifest), "manifest"))


def _class_balance(counts: dict) -> str:
    neg, pos = counts.get(0, 0), counts.get(1, 0)
    ratio = f"1:{neg / pos:.1f}" if pos else "no malicious rows"
    return f"benign={neg} malicious={pos} ({ratio})"


# -- subcommands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.params:
        raw = _read_json(args.params)
        try:
            params = (SynthParams(**{k: tuple(v) if isinstance(v, list) else v
                                     for k, v in raw.items()}),)
        except (TypeError, SynthError) as exc:
            raise UsageError(f"bad generator parameters: {exc}") from exc
        single = True
    else:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        params = preset(args.preset, args.seed or 0)
        if args.scenario is not None:
            params = tuple(p for p in params if p.scenario_id == args.scenario)
            if not params:
                raise UsageError(f"preset {args.preset!r} has no scenario {args.scenario!r}")
        single = len(params) == 1 and args.scenario is not None
    out = os.path.abspath(args.out or os.path.join(default_output_dir(), "synth"))
    with staged_dir(out) as tmp:
        for p in params:
            target = tmp if single else os.path.join(tmp, p.scenario_id)
            write_scenario(p, target)
            with open(os.path.join(target, "params.json"), "w", encoding="utf-8") as fh:
                json.dump({"generator": p.to_dict(), "version": __version__}, fh,
                          indent=2, sort_keys=True)
                fh.write("\n")
    for p in params:
        print(f"scenario {p.scenario_id} ({p.kind}) -> {out if single else os.path.join(out, p.scenario_id)}")
    return 0


def _featurize_config(args, log_path, manifest) -> dict:
    return {"command": "featurize", "version": __version__, "log": log_path,
            "manifest": manifest, "representation": args.rep, "window_len": args.window,
            "labeling": args.labeling}


def cmd_featurize(args) -> int:
    log_path, manifest = _scenario_paths(args)
    try:
        scenario = load_scenario(log_path=log_path, manifest_path=manifest)
    except (ConnLogError, ManifestError) as exc:
        raise ExperimentError("load", str(exc)) from exc
    try:
        matrix = featurize_scenario(scenario, args.rep, args.window, args.labeling)
    except Exception as exc:  # noqa: BLE001
        raise ExperimentError("featurize", f"{type(exc).__name__}: {exc}") from exc
    config = _featurize_config(args, log_path, manifest)
    config["schema_fingerprint"] = matrix.fingerprint
    out = os.path.abspath(args.out or os.path.join(default_output_dir(), "features.csv"))
    if out.endswith(".npz"):
        os.makedirs(os.path.dirname(out), exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".npz", dir=os.path.dirname(out))
        os.close(fd)
        matrix.save_npz(tmp)
        os.replace(tmp, out)
    else:
        write_atomic(out, matrix.to_csv(metadata=config))
    if args.schema:
        from .features import describe_column
        lines = ["column,description"] + [f"{c},\"{describe_column(c)}\"" for c in matrix.columns]
        write_atomic(os.path.abspath(args.schema), _header(config) + "\n".join(lines) + "\n")
    print(f"rows={matrix.n_rows} columns={matrix.n_features} "
          f"{_class_balance(matrix.class_counts())}")
    print(f"wrote {out}")
    return 0


def cmd_label(args) -> int:
    log_path, manifest = _scenario_paths(args)
    try:
        records, spec = load_scenario(log_path=log_path, manifest_path=manifest)
    except (ConnLogError, ManifestError) as exc:
        raise ExperimentError("load", str(exc)) from exc
    try:
        labels = label_records(records, spec, args.regime, args.origin_only)
    except LabelingError as exc:
        raise ExperimentError("label", str(exc)) from exc
    config = {"command": "label", "version": __version__, "log": log_path, "manifest": manifest,
              "regime": args.regime, "origin_only": args.origin_only}
    lines = ["line,ts,orig_h,dest_h,label"]
    lines += [f"{i},{r.ts!r},{r.orig_h},{r.dest_h},{int(y)}"
              for i, (r, y) in enumerate(zip(records, labels))]
    out = os.path.abspath(args.out or os.path.join(default_output_dir(), "labels.csv"))
    write_atomic(out, _header(config) + "\n".join(lines) + "\n")
    pos = int(np.sum(labels))
    print(f"records={len(labels)} malicious={pos} benign={len(labels) - pos}")
    print(f"wrote {out}")
    return 0


def _load_matrices(paths) -> FeatureMatrix:
    parts = []
    for p in paths:
        p = _require_file(os.path.abspath(p), "feature file")
        parts.append(FeatureMatrix.load_npz(p) if p.endswith(".npz") else FeatureMatrix.read_csv(p))
    return FeatureMatrix.concat(parts)


def cmd_train(args) -> int:
    base = _read_json(args.config) if args.config else {}
    grid = base.pop("grid", None)
    if args.grid:
        grid = json.loads(args.grid) if args.grid.lstrip().startswith("{") else _read_json(args.grid)
    params = _params_from(args, base)
    matrix = _load_matrices(args.features)
    config = {"command": "train", "version": __version__, "features": [os.path.abspath(p) for p in args.features],
              "params": params.to_dict(), "grid": grid, "folds": args.folds}
    try:
        if grid:
            params, scores = grid_search(matrix, params.family, grid, k=args.folds,
                                         seed=params.seed, base=params)
            for cell, score in scores.items():
                print(f"cv_f1={score:.4f} {json.dumps(cell.relevant(), sort_keys=True)}")
            config["selected"] = params.to_dict()
        model = train(matrix, params)
    except Exception as exc:  # noqa: BLE001
        raise ExperimentError("train", f"{type(exc).__name__}: {exc}") from exc
    out = os.path.abspath(args.out or os.path.join(default_output_dir(), "model.json"))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=os.path.dirname(out) or ".")
    os.close(fd)
    save_model(model, tmp)
    os.replace(tmp, out)
    write_atomic(out + ".config.json", json.dumps(config, indent=2, sort_keys=True) + "\n")
    print(f"trained {params.family} on rows={matrix.n_rows} columns={matrix.n_features} "
          f"{_class_balance(matrix.class_counts())}")
    print(f"wrote {out}")
    return 0


def cmd_importance(args) -> int:
    path = _require_file(os.path.abspath(args.model), "model file")
    model = load_model(path)
    ranking = feature_importance(model)
    if args.top:
        ranking = ranking[: args.top]
    config = {"command": "importance", "version": __version__, "model": path,
              "params": model.params.to_dict()}
    lines = ["rank,feature,importance"]
    lines += [f"{i + 1},{n},{v!r}" for i, (n, v) in enumerate(ranking)]
    text = _header(config) + "\n".join(lines) + "\n"
    if args.out:
        write_atomic(os.path.abspath(args.out), text)
        print(f"wrote {os.path.abspath(args.out)}")
    else:
        sys.stdout.write(text)
    return 0


def _experiment_setup(args, sweep: bool):
    config_path = os.path.abspath(args.config)
    cfg = _read_json(config_path)
    base_dir = os.path.dirname(config_path)
    scen = cfg.get("scenarios")
    if not isinstance(scen, dict) or len(scen) < 2:
        raise UsageError("config needs a 'scenarios' object mapping at least two ids to inputs")
    inputs = {}
    for sid, entry in scen.items():
        if isinstance(entry, str):
            d = _resolve(entry, base_dir)
            pair = (os.path.join(d, "conn.log"), os.path.join(d, "manifest.txt"))
        else:
            pair = (_resolve(entry["log"], base_dir), _resolve(entry["manifest"], base_dir))
        _require_file(pair[0], f"conn.log for scenario {sid}")
        _require_file(pair[1], f"manifest for scenario {sid}")
        inputs[str(sid)] = pair
    for key, flag in (("representation", args.rep), ("window_len", args.window),
                      ("labeling", args.labeling), ("botnet", args.botnet)):
        if flag is not None:
            cfg[key] = flag
    params = _params_from(args, cfg.get("params"))
    tests = args.test or cfg.get("test_scenarios") or list(inputs)
    tests = [str(t) for t in tests]
    windows = None
    if sweep:
        windows = args.windows or cfg.get("windows") or list(SWEEP_WINDOWS)
        windows = [float(w) for w in windows]
        if any(not w > 0 for w in windows):
            raise UsageError("window lengths must be > 0")
    try:
        base = ExperimentSpec(
            botnet=str(cfg.get("botnet", "botnet")), scenarios=tuple(inputs),
            test_scenario=tests[0], representation=cfg.get("representation", "traffic"),
            window_len=float(cfg.get("window_len", 30.0)),
            labeling=cfg.get("labeling", "coarse"), params=params)
        specs = [replace(base, test_scenario=t) for t in tests]
        for s in specs:
            s.__post_init__()
    except ValueError as exc:
        raise UsageError(f"bad experiment config: {exc}") from exc
    if sweep:
        specs = [replace(s, window_len=w) for s in specs for w in windows]
    resolved = {"command": "sweep" if sweep else "experiment", "version": __version__,
                "config_file": config_path,
                "inputs": {k: {"log": v[0], "manifest": v[1]} for k, v in inputs.items()},
                "test_scenarios": tests, "windows": windows,
                "base": base.to_dict()}
    return inputs, specs, resolved


def _load_inputs(inputs):
    data = {}
    for sid, (log_path, manifest) in inputs.items():
        try:
            data[sid] = load_scenario(log_path=log_path, manifest_path=manifest)
        except (ConnLogError, ManifestError, OSError) as exc:
            raise ExperimentError("load", f"scenario {sid}: {exc}") from exc
    return data


def _report_dir(spec: ExperimentSpec) -> str:
    rep = spec.representation.replace("+", "_")
    window = f"{spec.window_len:g}"
    return f"{spec.botnet}_{rep}_{spec.labeling}_{spec.params.family}_T{window}_test{spec.test_scenario}"


def _run_and_write(args, sweep: bool) -> int:
    inputs, specs, resolved = _experiment_setup(args, sweep)
    data = _load_inputs(inputs)
    log.info("running %d experiment(s) with %d job(s)", len(specs), args.jobs)
    reports = run_many(specs, data, MatrixCache(), jobs=args.jobs)
    default = "sweep" if sweep else "experiment"
    out = os.path.abspath(args.out or os.path.join(default_output_dir(), default))
    header = _header(resolved)
    with staged_dir(out) as tmp:
        for spec, report in zip(specs, reports):
            d = os.path.join(tmp, _report_dir(spec))
            os.makedirs(d)
            doc = report.to_dict()
            doc["run"] = resolved
            with open(os.path.join(d, "report.json"), "w", encoding="utf-8") as fh:
                fh.write(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
            for name, text in (("report.csv", reports_csv([report])),
                               ("pr_curve.csv", report.pr_csv()),
                               ("importance.csv", report.importance_csv())):
                with open(os.path.join(d, name), "w", encoding="utf-8", newline="") as fh:
                    fh.write(header + text)
        with open(os.path.join(tmp, "summary.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(header + reports_csv(reports))
        if sweep:
            with open(os.path.join(tmp, "f1_by_window.csv"), "w", encoding="utf-8",
                      newline="") as fh:
                fh.write(header + f1_by_window(reports))
    for spec, r in zip(specs, reports):
        auc = "n/a" if r.roc_auc is None else f"{r.roc_auc:.4f}"
        print(f"test={spec.test_scenario} T={spec.window_len:g} P={r.precision:.4f} "
              f"R={r.recall:.4f} F1={r.f1:.4f} AUC={auc}")
    print(f"wrote {len(reports)} report(s) to {out}")
    return 0


def cmd_experiment(args) -> int:
    return _run_and_write(args, sweep=False)


def cmd_sweep(args) -> int:
    return _run_and_write(args, sweep=True)


# -- parser --------------------------------------------------------------------------

def _add_scenario_inputs(p):
    p.add_argument("--scenario-dir", help="directory holding conn.log and manifest.txt")
    p.add_argument("--log", help="conn.log path")
    p.add_argument("--manifest", help="scenario manifest path")


def _add_model_flags(p):
    p.add_argument("--family", choices=sorted(FAMILIES) + sorted(FAMILY_ALIASES))
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="hyper-parameter override (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="botdetect", description="Botnet traffic featurization, training and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenarios")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
    src.add_argument("--params", help="JSON file of generator parameters")
    p.add_argument("--scenario", help="only this scenario id of the preset")
    p.add_argument("--seed", type=int, help="offset added to preset seeds")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="build a feature matrix for one scenario")
    _add_scenario_inputs(p)
    p.add_argument("--rep", choices=REPRESENTATIONS, default="traffic")
    p.add_argument("--window", type=float, default=30.0, help="window length in seconds")
    p.add_argument("--labeling", choices=REGIMES, default="coarse")
    p.add_argument("--schema", help="also write column descriptions to this CSV")
    p.add_argument("--out", help="output .csv or .npz file")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("label", help="label every conn.log record")
    _add_scenario_inputs(p)
    p.add_argument("--regime", choices=REGIMES, default="coarse")
    p.add_argument("--origin-only", action="store_true",
                   help="coarse: only records originated by a bot")
    p.add_argument("--out", help="output CSV")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a model on feature files")
    p.add_argument("features", nargs="+", help="feature CSV/NPZ files (concatenated)")
    p.add_argument("--config", help="JSON of hyper-parameters, optionally with a 'grid' key")
    p.add_argument("--grid", help="JSON object or file mapping parameter -> candidate values")
    p.add_argument("--folds", type=int, default=5)
    _add_model_flags(p)
    p.add_argument("--out", help="model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("importance", help="rank features of a trained model")
    p.add_argument("model")
    p.add_argument("--top", type=int)
    p.add_argument("--out", help="CSV file (default stdout)")
    p.set_defaults(func=cmd_importance)

    for name, func, helptext in (("experiment", cmd_experiment, "leave-one-scenario-out runs"),
                                 ("sweep", cmd_sweep, "experiments over several window lengths")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="experiment JSON config")
        p.add_argument("--test", action="append", help="held-out scenario (repeatable)")
        p.add_argument("--rep", choices=REPRESENTATIONS)
        p.add_argument("--window", type=float)
        p.add_argument("--labeling", choices=REGIMES)
        p.add_argument("--botnet")
        _add_model_flags(p)
        if name == "sweep":
            p.add_argument("--windows", type=lambda s: [float(x) for x in s.split(",")],
                           help="comma-separated window lengths")
        p.add_argument("--jobs", type=int, default=1, help="parallel experiments")
        p.add_argument("--out", help="output directory")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"botdetect {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ExperimentError as exc:
        print(f"botdetect {args.command}: {exc}", file=sys.stderr)
        return 1
    except (SynthError, ValueError, OSError) as exc:
        print(f"botdetect {args.command}: [{args.command}] {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
