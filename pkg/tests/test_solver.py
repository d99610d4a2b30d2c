import numpy as np
import pytest
from scipy import sparse

from hflm.core import ConfigError, NumericalError, PanelSpec
from hflm.operators import build_design, build_horizontal_penalty, build_vertical_penalty
from hflm.solver import (
    Gram,
    NormalSystem,
    SolverError,
    assemble,
    assemble_from_gram,
    fit_surface,
    objective,
    solve,
)
from oracles import dense_solve
from conftest import anomaly, random_anomaly


def problem(spec, rng):
    x, y = random_anomaly(spec, rng), random_anomaly(spec, rng)
    return build_design(x, y), build_horizontal_penalty(spec), build_vertical_penalty(spec)


def identity_system(values):
    n = len(values)
    return NormalSystem(sparse.csc_array(sparse.eye_array(n)), np.asarray(values, float), np.ones(n, bool))


class TestAssemble:
    def test_identity_design(self):
        # D = 1, T = 4, one replicate: Z is the identity
        spec = PanelSpec(4, 1, 1)
        y = anomaly(spec, [1.0, -2.0, 0.5, 3.0])
        system = build_design(anomaly(spec, np.ones(4)), y)
        ns = assemble(system, build_horizontal_penalty(spec), build_vertical_penalty(spec), 0.0, 0.0)
        np.testing.assert_array_equal(ns.A.toarray(), np.eye(4))
        np.testing.assert_array_equal(ns.rhs, y.values)

    def test_dimensions(self, tiny_spec, rng):
        system, D_H, D_V = problem(tiny_spec, rng)
        assert assemble(system, D_H, D_V, 1.0, 1.0).A.shape == (6, 6)
        mask = np.array([True, False] * 3)
        assert assemble(system, D_H, D_V, 1.0, 1.0, mask).A.shape == (3, 3)

    def test_exactly_symmetric(self, rng):
        system, D_H, D_V = problem(PanelSpec(9, 4, 3), rng)
        A = assemble(system, D_H, D_V, 3.7, 0.11).A
        assert (A != A.T).nnz == 0

    def test_empty_support(self, tiny_spec, rng):
        system, D_H, D_V = problem(tiny_spec, rng)
        with pytest.raises(ConfigError, match="empty support"):
            assemble(system, D_H, D_V, 1.0, 1.0, np.zeros(6, bool))

    def test_negative_weight(self, tiny_spec, rng):
        system, D_H, D_V = problem(tiny_spec, rng)
        with pytest.raises(ConfigError):
            assemble(system, D_H, D_V, -1.0, 1.0)

    def test_unpenalized_underdetermined_rejected(self, tiny_spec, rng):
        system, D_H, D_V = problem(tiny_spec, rng)
        with pytest.raises(ConfigError, match="singular"):
            assemble(system, D_H, D_V, 0.0, 0.0)


class TestSolve:
    def test_identity(self):
        b, info = solve(identity_system([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(b, [1.0, 2.0, 3.0])
        assert info["method"] == "direct"

    def test_zero_rhs(self):
        b, info = solve(identity_system([0.0, 0.0]))
        assert info["method"] == "trivial" and not b.any()

    def test_indefinite_rejected(self):
        A = sparse.csc_array(np.diag([1.0, -1.0]))
        with pytest.raises(NumericalError):
            solve(NormalSystem(A, np.ones(2), np.ones(2, bool)))

    def test_dense_oracle_small(self, rng):
        spec = PanelSpec(5, 3, 2)
        x, y = random_anomaly(spec, rng), random_anomaly(spec, rng)
        system = build_design(x, y)
        b, _ = solve(assemble(system, build_horizontal_penalty(spec), build_vertical_penalty(spec), 1.0, 1.0))
        ref = dense_solve(x.values, y.values, 3, 5, 1.0, 1.0)
        assert np.linalg.norm(b - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_dense_oracle_masked(self, rng):
        spec = PanelSpec(6, 4, 3)
        x, y = random_anomaly(spec, rng), random_anomaly(spec, rng)
        system = build_design(x, y)
        mask = np.tile([True, True, False, False], 6)
        ns = assemble(system, build_horizontal_penalty(spec), build_vertical_penalty(spec), 0.5, 2.0, mask)
        b, _ = solve(ns)
        ref = dense_solve(x.values, y.values, 4, 6, 0.5, 2.0, mask)
        assert np.linalg.norm(b - ref) <= 1e-8 * np.linalg.norm(ref)
        assert not b[~mask].any()

    def test_cg_path_matches_direct(self, rng):
        system, D_H, D_V = problem(PanelSpec(12, 5, 4), rng)
        ns = assemble(system, D_H, D_V, 2.0, 0.5)
        direct, _ = solve(ns)
        iterative, info = solve(ns, direct_limit=0)
        assert info["method"] == "cg"
        assert np.linalg.norm(iterative - direct) <= 1e-8 * np.linalg.norm(direct)

    def test_cg_failure_reported(self, rng):
        system, D_H, D_V = problem(PanelSpec(12, 5, 4), rng)
        ns = assemble(system, D_H, D_V, 2.0, 0.5)
        with pytest.raises(NumericalError):
            import hflm.solver as mod

            old = mod.CG_MAX_ITER
            mod.CG_MAX_ITER = 1
            try:
                solve(ns, direct_limit=0)
            finally:
                mod.CG_MAX_ITER = old

    def test_residual_floor_at_extreme_weight(self, rng):
        system, D_H, D_V = problem(PanelSpec(10, 4, 3), rng)
        b, info = solve(assemble(system, D_H, D_V, np.exp(20), 1.0))
        assert info["residual"] <= info["tolerance"]
        assert np.all(np.isfinite(b))

    def test_huge_vertical_weight_shrinks_to_zero(self, rng):
        system, D_H, D_V = problem(PanelSpec(6, 3, 8), rng)
        free, _ = solve(assemble(system, D_H, D_V, 0.0, 1e-8))
        pinned, _ = solve(assemble(system, D_H, D_V, 0.0, 1e12))
        assert np.linalg.norm(pinned) <= 1e-6 * np.linalg.norm(free)

    def test_solver_error_is_numerical(self):
        assert issubclass(SolverError, NumericalError)


class TestFitSurface:
    def test_noiseless_recovery(self, rng):
        spec = PanelSpec(4, 3, 12)
        x = random_anomaly(spec, rng)
        truth = rng.normal(size=spec.coefficient_count)
        system0 = build_design(x, anomaly(spec, np.zeros(spec.observation_count)))
        y = np.zeros(spec.observation_count)
        y[system0.row_global] = system0.Z @ truth
        system = build_design(x, anomaly(spec, y))
        est = fit_surface(system, build_horizontal_penalty(spec), build_vertical_penalty(spec), 1e-8, 1e-8)
        assert np.linalg.norm(est.b - truth) <= 1e-4 * np.linalg.norm(truth)

    def test_zero_driver_gives_zero(self, rng):
        spec = PanelSpec(5, 2, 3)
        system = build_design(anomaly(spec, np.zeros(15)), random_anomaly(spec, rng))
        est = fit_surface(system, build_horizontal_penalty(spec), build_vertical_penalty(spec), 1.0, 1.0)
        assert not est.b.any()

    def test_deterministic(self, rng):
        system, D_H, D_V = problem(PanelSpec(8, 3, 3), rng)
        a = fit_surface(system, D_H, D_V, 1.3, 0.7)
        b = fit_surface(system, D_H, D_V, 1.3, 0.7)
        assert np.array_equal(a.b, b.b)

    def test_objective_minimal(self, rng):
        system, D_H, D_V = problem(PanelSpec(8, 3, 3), rng)
        w_h, w_v = 2.0, 0.3
        b = fit_surface(system, D_H, D_V, w_h, w_v).b
        best = objective(system, D_H, D_V, w_h, w_v, b)
        slack = 1e-9 * max(1.0, abs(best))
        assert best <= objective(system, D_H, D_V, w_h, w_v, np.zeros_like(b)) + slack
        for _ in range(100):
            v = rng.normal(size=b.size)
            v /= np.linalg.norm(v)
            assert best <= objective(system, D_H, D_V, w_h, w_v, b + 1e-3 * v) + slack

    def test_support_respected(self, rng):
        spec = PanelSpec(8, 3, 3)
        system, D_H, D_V = problem(spec, rng)
        mask = rng.uniform(size=spec.coefficient_count) < 0.6
        mask[0] = True
        est = fit_surface(system, D_H, D_V, 1.0, 1.0, mask)
        assert not est.b[~mask].any()

    def test_gram_reuse(self, rng):
        system, D_H, D_V = problem(PanelSpec(8, 3, 3), rng)
        gram = Gram.build(system, D_H, D_V)
        a = fit_surface(system, D_H, D_V, 1.0, 2.0, gram=gram)
        b, _ = solve(assemble_from_gram(gram, 1.0, 2.0))
        assert np.array_equal(a.b, b)
