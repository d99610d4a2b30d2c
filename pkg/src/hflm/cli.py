"""Command-line front end: ``hflm fit|simulate|eval --config <path>``.

Configuration files hold one ``key = value`` per line; ``#`` starts a
comment. Relative paths are resolved against the config file's directory.
Machine-readable results go to stdout, log messages to stderr.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import metrics
from .core import (
    ConfigError,
    DataError,
    FitConfig,
    LagFunction,
    NumericalError,
    PanelSpec,
    SeriesPanel,
)
from .hyperopt import trace_rows
from .ingest import load_csv, prepare_panels, remove_leap_days, seasonal_demean, split_rain_snow
from .pipeline import SPLIT_MODES, run_pipeline
from .simulate import (
    DESK_BUDGET,
    DESK_LOG_WH_BOUNDS,
    DESK_SPEC,
    FAITHFUL_BUDGET,
    Scenario,
    run_study,
    synth_rainfall,
    synth_truth,
    read_surface,
    write_surface,
)

log = logging.getLogger("hflm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _bounds(text: str) -> tuple[float, float]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 2:
        raise ValueError("expected 'low,high'")
    return float(parts[0]), float(parts[1])


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


FIT_CONFIG_KEYS = {
    "w_h": float,
    "w_v": float,
    "q": float,
    "solver_rel_tol": float,
    "hyperopt_init_count": int,
    "hyperopt_iter_count": int,
    "log_wh_bounds": _bounds,
    "log_wv_bounds": _bounds,
    "threshold_grid_size": int,
    "seed": int,
}
PATH_KEYS = {"data", "output_dir", "truth_path", "truth_surface", "estimate_surface", "truth_delta", "estimate_delta"}
COMMAND_KEYS = {
    "fit": {
        **FIT_CONFIG_KEYS,
        "data": str,
        "output_dir": str,
        "max_lag": int,
        "rain_threshold": float,
        "split_mode": _choice(*SPLIT_MODES),
        "date_column": str,
        "precipitation_column": str,
        "temperature_column": str,
        "flow_column": str,
    },
    "simulate": {
        **FIT_CONFIG_KEYS,
        "output_dir": str,
        "scenario": str,
        "target_r2": float,
        "replicate_runs": int,
        "budget": _choice("desk", "faithful"),
        "truth": _choice("smooth_bump", "from_file"),
        "truth_path": str,
        "lag_min": float,
        "lag_max": float,
        "amplitude": float,
        "period_length": int,
        "max_lag": int,
        "replicate_count": int,
        "data": str,
        "rain_threshold": float,
        "date_column": str,
        "precipitation_column": str,
        "temperature_column": str,
    },
    "eval": {
        "truth_surface": str,
        "estimate_surface": str,
        "truth_delta": str,
        "estimate_delta": str,
    },
}
REQUIRED = {"fit": ("data", "output_dir", "max_lag"), "simulate": ("output_dir",), "eval": ("truth_surface", "estimate_surface")}


def read_config(path, command: str) -> dict:
    """Parse and type-check a key=value file; paths come back absolute."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    allowed = COMMAND_KEYS[command]
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in allowed:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for '{command}'")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = allowed[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    missing = [k for k in REQUIRED[command] if k not in values]
    if missing:
        raise ConfigError(f"{path}: missing required key(s): {', '.join(missing)}")
    for key in PATH_KEYS & values.keys():
        values[key] = (path.parent / values[key]).resolve()
    return values


def _fit_config(values: dict, args, **defaults) -> FitConfig:
    settings = {**defaults, **{k: v for k, v in values.items() if k in FIT_CONFIG_KEYS}}
    if getattr(args, "q", None) is not None:
        settings["q"] = args.q
    if args.seed is not None:
        settings["seed"] = args.seed
    return FitConfig(**settings)


def _schema(values: dict) -> dict:
    names = ("date", "precipitation", "temperature", "flow")
    return {name: values[f"{name}_column"] for name in names if f"{name}_column" in values}


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _finite(obj):
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return None
    return obj


def _dumps(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, default=_json_default)


def _write_json(obj, path: Path) -> None:
    path.write_text(_dumps(obj) + "\n", encoding="utf-8")


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def write_delta(delta: LagFunction, path) -> None:
    _write_csv(pd.DataFrame({"t": np.arange(1, delta.spec.T + 1), "delta": delta.delta}), Path(path))


def read_delta(path, spec: PanelSpec) -> LagFunction:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    frame = pd.read_csv(path)
    if list(frame.columns[:2]) != ["t", "delta"]:
        raise DataError(f"{path}: expected columns t,delta")
    if len(frame) != spec.T or sorted(frame["t"]) != list(range(1, spec.T + 1)):
        raise DataError(f"{path}: expected days 1..{spec.T}")
    delta = np.empty(spec.T, dtype=int)
    delta[frame["t"].to_numpy() - 1] = frame["delta"].to_numpy(dtype=int)
    return LagFunction(spec, delta)


def _figures(enabled: bool):
    if not enabled:
        return None
    from . import report

    return report


def cmd_fit(args) -> int:
    values = read_config(args.config, "fit")
    config = _fit_config(values, args)
    out = Path(values["output_dir"])
    records = load_csv(values["data"], _schema(values))
    x, y, means = prepare_panels(records, values["max_lag"], values.get("rain_threshold", 0.0))
    run = run_pipeline(x, y, config, values.get("split_mode", "train80_val20"))
    res = run.result

    out.mkdir(parents=True, exist_ok=True)
    write_surface(res.surface, out / "surface.csv")
    write_delta(res.delta, out / "delta.csv")
    _write_csv(means, out / "seasonal_means.csv")
    if run.curve is not None:
        curve = run.curve
        _write_csv(pd.DataFrame({"q": curve.q_grid, "r2": curve.r2, "support_size": curve.support_sizes}), out / "curve.csv")
    for name, trace in run.traces.items():
        _write_csv(pd.DataFrame(trace_rows(trace)), out / f"trace_{name}.csv")
    manifest = run.manifest()
    # wall-clock timings vary run to run; kept apart so the manifest is reproducible
    timings = manifest.pop("stage_seconds")
    manifest["data"] = values["data"]
    manifest["max_lag"] = values["max_lag"]
    _write_json(manifest, out / "manifest.json")
    _write_json(timings, out / "timings.json")

    report = _figures(not args.no_figures)
    if report is not None:
        report.plot_surface(res.surface, out / "surface.png", res.delta)
        if run.curve is not None:
            report.plot_threshold_curve(run.curve, out / "curve.png", res.threshold)
        for name, trace in run.traces.items():
            report.plot_trace(pd.DataFrame(trace_rows(trace)), out / f"trace_{name}.png")
    print(_dumps(manifest))
    return EXIT_OK


def _rainfall_panel(values: dict, max_lag: int) -> SeriesPanel:
    records = load_csv(values["data"], _schema(values), require_flow=False)
    records = remove_leap_days(records)
    spec = PanelSpec(365, max_lag, len(records) // 365)
    rain = SeriesPanel(spec, split_rain_snow(records, values.get("rain_threshold", 0.0)))
    return seasonal_demean(rain)[0]


def cmd_simulate(args) -> int:
    values = read_config(args.config, "simulate")
    target = values.get("target_r2", 0.8)
    if not 0 < target < 1:
        raise ConfigError(f"target_r2 must lie in (0, 1), got {target}")
    budget = FAITHFUL_BUDGET if values.get("budget", "desk") == "faithful" else DESK_BUDGET
    seed = args.seed if args.seed is not None else values.get("seed", 0)
    if "data" in values:
        x = _rainfall_panel(values, values.get("max_lag", DESK_SPEC.D))
        defaults = {}
    else:
        spec = PanelSpec(
            values.get("period_length", DESK_SPEC.T),
            values.get("max_lag", DESK_SPEC.D),
            values.get("replicate_count", DESK_SPEC.n),
        )
        x = synth_rainfall(spec, seed)
        defaults = {"log_wh_bounds": DESK_LOG_WH_BOUNDS}
    spec = x.spec
    recipe = values.get("truth", "smooth_bump")
    if recipe == "from_file":
        if "truth_path" not in values:
            raise ConfigError("truth = from_file needs truth_path")
        truth = synth_truth(spec, "from_file", path=values["truth_path"])
    else:
        truth = synth_truth(
            spec,
            "smooth_bump",
            lag_min=values.get("lag_min", 3.0),
            lag_max=values.get("lag_max", min(18.0, spec.D - 1.0)),
            center_t=spec.T / 2,
            amplitude=values.get("amplitude", 1.0),
        )
    config = _fit_config(
        values, args, hyperopt_init_count=budget[0], hyperopt_iter_count=budget[1], **defaults
    )
    scenario = Scenario(
        name=values.get("scenario", f"smooth_bump_r2_{target}"),
        x_panel=x,
        truth=truth,
        target_r2=target,
        replicate_runs=values.get("replicate_runs", 100),
        seed=config.seed,
        config=config,
    )
    threads = args.threads or os.cpu_count() or 1
    study = run_study(scenario, threads=min(threads, scenario.replicate_runs))

    out = Path(values["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(study.table, out / "study.csv")
    write_surface(truth, out / "truth_surface.csv")
    _write_json(study.summary, out / "summary.json")
    report = _figures(not args.no_figures)
    if report is not None:
        report.plot_study(study.table, out / "study.png")
        from .sparsity import delta_from_surface

        report.plot_surface(truth, out / "truth_surface.png", delta_from_surface(truth))
    print(_dumps(study.summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .sparsity import delta_from_surface

    values = read_config(args.config, "eval")
    truth = read_surface(values["truth_surface"])
    est = read_surface(values["estimate_surface"])
    if truth.spec != est.spec:
        raise DataError(f"surface grids differ: D={truth.spec.D}, T={truth.spec.T} vs D={est.spec.D}, T={est.spec.T}")
    spec = truth.spec
    d_true = read_delta(values["truth_delta"], spec) if "truth_delta" in values else delta_from_surface(truth)
    d_est = read_delta(values["estimate_delta"], spec) if "estimate_delta" in values else delta_from_surface(est)
    rep, errors = metrics.evaluate(truth, est, d_true, d_est)
    print(rep.to_json(errors=errors))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hflm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("fit", "estimate a surface and lag function from daily records"),
        ("simulate", "run a replicate study on a simulated scenario"),
        ("eval", "score an estimated surface against a reference"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="key=value configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        if name != "eval":
            p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
        if name == "fit":
            p.add_argument("--q", type=float, default=None, help="fixed sparsity threshold")
        if name in ("fit", "simulate"):
            p.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")
    return parser


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # remaining validation failures from constructors are configuration problems
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
