"""End-to-end estimation: weights, smooth fit, thresholding, re-tuned sparse refit."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    NO_EFFECT,
    CoefficientSurface,
    DataError,
    FitConfig,
    FitResult,
    SeriesPanel,
)
from .hyperopt import OptimizationResult, SearchSpace, optimize_weights
from .operators import DesignSystem, build_design, build_horizontal_penalty, build_vertical_penalty
from .solver import Gram, assemble_from_gram, solve
from .sparsity import (
    NoKneeError,
    NothingToThresholdError,
    ThresholdCurve,
    apply_threshold,
    extract_delta,
    group_norms,
    knee_onset,
    threshold_curve,
    whole_r2,
)

log = logging.getLogger(__name__)

SPLIT_MODES = {
    # fractions of the usable rows, in time order: train, validation, test
    "train80_val20": (0.8, 0.2, 0.0),
    "train60_val20_test20": (0.6, 0.2, 0.2),
}


@dataclass(eq=False)
class Problem:
    """Design and penalties for one dataset, with cross products cached per row block."""

    system: DesignSystem
    D_H: object
    D_V: object
    _grams: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_panels(cls, x: SeriesPanel, y: SeriesPanel) -> "Problem":
        system = build_design(x, y)
        return cls(system, build_horizontal_penalty(x.spec), build_vertical_penalty(x.spec))

    @classmethod
    def from_system(cls, system: DesignSystem) -> "Problem":
        return cls(system, build_horizontal_penalty(system.spec), build_vertical_penalty(system.spec))

    def block(self, start: int, stop: int) -> tuple[DesignSystem, Gram]:
        key = (start, stop)
        if key not in self._grams:
            sub = self.system.rows(np.arange(start, stop))
            self._grams[key] = (sub, Gram.build(sub, self.D_H, self.D_V))
        return self._grams[key]


def split_points(row_count: int, mode: str) -> tuple[int, int, int]:
    """Row offsets ``(train_end, val_end, stop)`` of a chronological split."""
    if mode not in SPLIT_MODES:
        raise DataError(f"unknown split mode {mode!r}; expected one of {sorted(SPLIT_MODES)}")
    train, val, _ = SPLIT_MODES[mode]
    train_end = int(round(train * row_count))
    val_end = int(round((train + val) * row_count))
    if train_end < 1 or val_end - train_end < 2:
        raise DataError(f"{row_count} rows are too few for split {mode}")
    return train_end, val_end, row_count


@dataclass(eq=False)
class PipelineRun:
    config: FitConfig
    split_mode: str
    result: FitResult
    curve: ThresholdCurve | None = None
    traces: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    test_r2: float | None = None

    def manifest(self) -> dict:
        res = self.result
        d = res.diagnostics
        return {
            "config": _config_echo(self.config),
            "split_mode": self.split_mode,
            "stage_seconds": self.timings,
            "weights_before_sparsification": {"w_h": d.get("w_h_smooth"), "w_v": d.get("w_v_smooth")},
            "weights_after_sparsification": {"w_h": res.weights[0], "w_v": res.weights[1]},
            "q": res.threshold,
            "q_source": d.get("q_source"),
            "support_size": int(res.support.sum()),
            "coefficient_count": int(res.support.size),
            "empty_support": bool(d.get("empty_support", False)),
            "r2_whole": res.r2_whole,
            "r2_validation": res.r2_validation,
            "r2_test": self.test_r2,
            "diagnostics": {k: v for k, v in d.items() if k not in ("w_h_smooth", "w_v_smooth")},
        }


def _config_echo(config: FitConfig) -> dict:
    return {
        "w_h": config.w_h,
        "w_v": config.w_v,
        "q": config.q,
        "solver_rel_tol": config.solver_rel_tol,
        "hyperopt_init_count": config.hyperopt_init_count,
        "hyperopt_iter_count": config.hyperopt_iter_count,
        "log_wh_bounds": list(config.log_wh_bounds),
        "log_wv_bounds": list(config.log_wv_bounds),
        "threshold_grid_size": config.threshold_grid_size,
        "seed": config.seed,
    }


def _validation_objective(problem: Problem, train_end: int, val_end: int, support, rel_tol: float):
    _, gram = problem.block(0, train_end)
    val, _ = problem.block(train_end, val_end)

    def objective(w_h: float, w_v: float) -> float:
        b, _ = solve(assemble_from_gram(gram, w_h, w_v, support), rel_tol)
        return whole_r2(val.Y, val.Z @ b)

    return objective


def _tune(objective, config: FitConfig, space: SearchSpace, initial_points=None) -> OptimizationResult:
    return optimize_weights(
        objective,
        space,
        init=config.hyperopt_init_count,
        iters=config.hyperopt_iter_count,
        seed=config.seed,
        initial_points=initial_points,
    )


def _warm_start(result: OptimizationResult, count: int) -> np.ndarray:
    values = np.array([row["r2_val"] for row in result.trace])
    order = np.argsort(-values, kind="stable")
    return result.points[order[:count]]


def run_on_problem(
    problem: Problem, config: FitConfig, split_mode: str = "train80_val20"
) -> PipelineRun:
    spec = problem.system.spec
    train_end, val_end, stop = split_points(problem.system.row_count, split_mode)
    space = SearchSpace(config.log_wh_bounds, config.log_wv_bounds)
    tol = config.solver_rel_tol
    fixed_weights = config.w_h is not None and config.w_v is not None
    timings, traces, diag = {}, {}, {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = round(now - clock, 6)
        clock = now

    # 1. weights for the smooth fit
    smooth_objective = _validation_objective(problem, train_end, val_end, None, tol)
    if fixed_weights:
        weights = (config.w_h, config.w_v)
        val_r2 = smooth_objective(*weights)
        first = None
    else:
        first = _tune(smooth_objective, config, space)
        weights, val_r2 = (first.w_h, first.w_v), first.best_value
        traces["smooth"] = first
    diag.update(w_h_smooth=weights[0], w_v_smooth=weights[1], r2_validation_smooth=val_r2)
    lap("weights")

    # 2. smooth fit on the training block
    _, train_gram = problem.block(0, train_end)
    b_smooth, info = solve(assemble_from_gram(train_gram, *weights), tol)
    smooth = CoefficientSurface(spec, b_smooth)
    diag["solver_residual_smooth"] = info["residual"]
    lap("smooth_fit")

    # 3./4. group norms and threshold
    norms = group_norms(smooth)
    avail, avail_gram = problem.block(0, val_end)
    curve = None
    if config.q is not None:
        q, diag["q_source"] = config.q, "user"
    else:
        try:
            curve = threshold_curve(avail, avail_gram, weights, smooth, config.threshold_grid_size, tol)
            q, knee = knee_onset(curve)
            diag.update({k: int(v) if isinstance(v, (bool, np.bool_)) else v for k, v in knee.items()})
            diag["q_source"] = "knee_onset"
        except (NoKneeError, NothingToThresholdError) as exc:
            log.warning("threshold selection failed (%s); dropping every coefficient", exc)
            q = float(np.nextafter(norms.G.max(), np.inf))
            diag["q_source"] = f"fallback: {exc}"
    support = apply_threshold(norms, q)
    lap("threshold")

    # 5. re-tune on the support, refit on all available rows
    if not support.any():
        diag["empty_support"] = 1
        final = CoefficientSurface.zeros(spec)
        r2_all = whole_r2(avail.Y, np.zeros_like(avail.Y))
        final_val = whole_r2(problem.block(train_end, val_end)[0].Y, np.zeros(val_end - train_end))
        final_weights = weights
    else:
        sparse_objective = _validation_objective(problem, train_end, val_end, support, tol)
        if fixed_weights:
            final_weights = weights
            final_val = sparse_objective(*weights)
        else:
            second = _tune(sparse_objective, config, space, _warm_start(first, config.hyperopt_init_count))
            final_weights, final_val = (second.w_h, second.w_v), second.best_value
            traces["sparse"] = second
        b_final, info = solve(assemble_from_gram(avail_gram, *final_weights, support), tol)
        diag["solver_residual_final"] = info["residual"]
        diag["solver_method"] = info["method"]
        final = CoefficientSurface(spec, b_final)
        r2_all = whole_r2(avail.Y, avail.Z @ b_final)
    lap("refit")

    delta = extract_delta(support, spec)
    diag["support_size"] = int(support.sum())
    diag["days_without_effect"] = int(np.sum(delta.delta == NO_EFFECT))
    result = FitResult(
        surface=final,
        delta=delta,
        support=support,
        weights=final_weights,
        threshold=float(q),
        r2_whole=float(r2_all),
        r2_validation=float(final_val),
        diagnostics=diag,
    )
    run = PipelineRun(config, split_mode, result, curve, traces, timings)
    if stop > val_end:
        test, _ = problem.block(val_end, stop)
        if test.row_count < spec.D:
            raise DataError(f"test block has {test.row_count} rows, fewer than D = {spec.D}")
        run.test_r2 = whole_r2(test.Y, test.Z @ final.b)
    return run


def run_pipeline(x: SeriesPanel, y: SeriesPanel, config: FitConfig, split_mode: str = "train80_val20") -> PipelineRun:
    return run_on_problem(Problem.from_panels(x, y), config, split_mode)


def run_algorithm1(x: SeriesPanel, y: SeriesPanel, config: FitConfig) -> FitResult:
    """Fit with the 80/20 chronological split and the final refit on all rows."""
    return run_pipeline(x, y, config, "train80_val20").result


def evaluate_holdout(x: SeriesPanel, y: SeriesPanel, config: FitConfig) -> float:
    """R^2 on the last 20% of rows after fitting on the first 80% (60/20 train/validation)."""
    return run_pipeline(x, y, config, "train60_val20_test20").test_r2

