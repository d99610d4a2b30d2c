import numpy as np
import pytest

from hflm.core import DataError, FitConfig, PanelSpec
from hflm.metrics import beta_r2
from hflm.pipeline import (
    SPLIT_MODES,
    Problem,
    evaluate_holdout,
    run_algorithm1,
    run_on_problem,
    run_pipeline,
    split_points,
)
from hflm.simulate import simulate_response, sinusoidal_lag, smooth_bump, synth_rainfall
from hflm.sparsity import extract_delta
from conftest import random_anomaly

QUICK = dict(hyperopt_init_count=4, hyperopt_iter_count=3, log_wh_bounds=(-2.0, 8.0), threshold_grid_size=15)


@pytest.fixture(scope="module")
def scenario():
    spec = PanelSpec(24, 6, 12)
    x = synth_rainfall(spec, seed=11)
    truth = smooth_bump(spec, sinusoidal_lag(24, 1, 4, 12))
    y = simulate_response(x, truth, 0.05, seed=2)
    return x, y, truth


class TestSplits:
    def test_fractions(self):
        assert split_points(100, "train80_val20") == (80, 100, 100)
        assert split_points(100, "train60_val20_test20") == (60, 80, 100)
        for fractions in SPLIT_MODES.values():
            assert sum(fractions) == pytest.approx(1.0)

    def test_unknown_mode(self):
        with pytest.raises(DataError):
            split_points(100, "random")

    def test_too_small(self):
        with pytest.raises(DataError):
            split_points(3, "train80_val20")


class TestRun:
    def test_result_contract(self, scenario):
        x, y, _ = scenario
        run = run_pipeline(x, y, FitConfig(**QUICK))
        res = run.result
        assert not res.surface.b[~res.support].any()
        assert np.array_equal(extract_delta(res.support, x.spec).delta, res.delta.delta)
        assert res.diagnostics["q_source"] == "knee_onset"
        assert len(run.traces["smooth"].trace) == 7 and len(run.traces["sparse"].trace) == 7
        lo, hi = np.exp(QUICK["log_wh_bounds"])
        assert lo <= res.weights[0] <= hi
        assert run.curve.q_grid.size == 15
        assert run.test_r2 is None

    def test_deterministic(self, scenario):
        x, y, _ = scenario
        a = run_algorithm1(x, y, FitConfig(**QUICK, seed=3))
        b = run_algorithm1(x, y, FitConfig(**QUICK, seed=3))
        assert np.array_equal(a.surface.b, b.surface.b)
        assert a.threshold == b.threshold and a.weights == b.weights

    def test_manifest(self, scenario):
        x, y, _ = scenario
        manifest = run_pipeline(x, y, FitConfig(**QUICK)).manifest()
        for key in (
            "config",
            "stage_seconds",
            "weights_before_sparsification",
            "weights_after_sparsification",
            "q",
            "support_size",
            "r2_whole",
            "r2_validation",
        ):
            assert key in manifest
        assert set(manifest["stage_seconds"]) == {"weights", "smooth_fit", "threshold", "refit"}

    def test_fixed_weights_and_q(self, scenario):
        x, y, _ = scenario
        run = run_pipeline(x, y, FitConfig(w_h=1.0, w_v=0.5, q=0.0))
        assert run.traces == {} and run.curve is None
        assert run.result.weights == (1.0, 0.5)
        assert run.result.support.all()
        assert run.result.diagnostics["q_source"] == "user"

    def test_reasonable_recovery(self, scenario):
        x, y, truth = scenario
        res = run_algorithm1(x, y, FitConfig(**QUICK))
        assert beta_r2(truth, res.surface) > 0.5


class TestHoldout:
    def test_noiseless(self):
        spec = PanelSpec(12, 4, 40)
        x = synth_rainfall(spec, seed=1)
        truth = smooth_bump(spec, sinusoidal_lag(12, 1, 2))
        y = simulate_response(x, truth, 0.0, seed=0)
        config = FitConfig(w_h=1e-8, w_v=1e-8, q=0.0)
        assert evaluate_holdout(x, y, config) >= 0.999
        assert beta_r2(truth, run_algorithm1(x, y, config).surface) >= 0.999

    def test_test_rows_use_earlier_history(self):
        spec = PanelSpec(10, 3, 10)
        x = synth_rainfall(spec, seed=2)
        truth = smooth_bump(spec, 2.0)
        y = simulate_response(x, truth, 0.0, seed=0)
        problem = Problem.from_panels(x, y)
        run = run_on_problem(problem, FitConfig(w_h=1e-8, w_v=1e-8, q=0.0), "train60_val20_test20")
        _, val_end, _ = split_points(problem.system.row_count, "train60_val20_test20")
        first_test = problem.system.rows([val_end])
        # the first test row's lag window reaches back into validation rows
        assert first_test.row_global[0] - (spec.D - 1) < problem.system.row_global[val_end]
        assert run.test_r2 > 0.99

    def test_short_test_block(self):
        spec = PanelSpec(4, 4, 3)
        x, y = random_anomaly(spec, np.random.default_rng(0)), random_anomaly(spec, np.random.default_rng(1))
        with pytest.raises(DataError, match="fewer than D"):
            evaluate_holdout(x, y, FitConfig(w_h=1.0, w_v=1.0, q=0.0))


class TestNullModel:
    def test_empty_support_flagged(self):
        spec = PanelSpec(24, 6, 12)
        x = synth_rainfall(spec, seed=5)
        zero = smooth_bump(spec, 0.0, amplitude=0.0)
        y = simulate_response(x, zero, 1.0, seed=9)
        run = run_pipeline(x, y, FitConfig(**QUICK))
        res = run.result
        if run.curve is not None:
            assert np.max(run.curve.r2) < 0.2
        # either the knee lands on an empty model or selection falls back to one
        if res.diagnostics.get("empty_support"):
            assert not res.surface.b.any() and np.all(res.delta.delta == -1)
        assert np.isfinite(res.r2_whole)

    def test_forced_empty_support(self):
        spec = PanelSpec(24, 6, 12)
        x = synth_rainfall(spec, seed=5)
        y = simulate_response(x, smooth_bump(spec, 0.0, amplitude=0.0), 1.0, seed=9)
        run = run_pipeline(x, y, FitConfig(w_h=1.0, w_v=1.0, q=1e12))
        assert run.manifest()["empty_support"] is True
        assert run.result.diagnostics["empty_support"] == 1
        assert not run.result.surface.b.any()
        assert np.all(run.result.delta.delta == -1)
