"""Bayesian optimization of the two smoothing weights.

The search runs in a unit square mapped affinely onto log-weight bounds. The
surrogate is a Gaussian process with an anisotropic squared-exponential
kernel whose hyperparameters are picked from a small grid by marginal
likelihood; candidates are scored by expected improvement on a fixed lattice.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.stats import norm

from .core import ConfigError

log = logging.getLogger(__name__)

LATTICE_SIZE = 64
LENGTH_SCALE_GRID = np.geomspace(0.05, 1.5, 5)
SIGNAL_VARIANCE_GRID = np.geomspace(0.25, 4.0, 5)
NUGGET = 1e-8
NEIGHBOURHOOD = np.arange(-2, 3) / (4 * LATTICE_SIZE)


@dataclass(frozen=True)
class SearchSpace:
    log_wh_bounds: tuple[float, float] = (10.0, 20.0)
    log_wv_bounds: tuple[float, float] = (-5.0, 15.0)

    def __post_init__(self):
        for lo, hi in (self.log_wh_bounds, self.log_wv_bounds):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ConfigError(f"search bounds must be finite and ordered, got {(lo, hi)}")

    def _bounds(self):
        return np.array([self.log_wh_bounds, self.log_wv_bounds], dtype=float)

    def to_log(self, u) -> np.ndarray:
        b = self._bounds()
        return b[:, 0] + np.asarray(u, dtype=float) * (b[:, 1] - b[:, 0])

    def to_unit(self, log_w) -> np.ndarray:
        b = self._bounds()
        return (np.asarray(log_w, dtype=float) - b[:, 0]) / (b[:, 1] - b[:, 0])

    def to_weights(self, u) -> tuple[float, float]:
        log_wh, log_wv = self.to_log(u)
        return float(np.exp(log_wh)), float(np.exp(log_wv))


def sample_initial(space: SearchSpace, count: int = 30, seed: int = 0) -> np.ndarray:
    """``count`` uniform points in the unit square, reproducible for a seed."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    return np.random.default_rng(seed).uniform(size=(count, 2))


def _sqexp(a, b, length_scales):
    d = (a[:, None, :] - b[None, :, :]) / length_scales
    return np.exp(-0.5 * np.sum(d * d, axis=-1))


@dataclass(eq=False)
class SurrogateModel:
    points: np.ndarray
    values: np.ndarray
    length_scales: np.ndarray
    signal_variance: float
    nugget: float
    mean: float
    scale: float
    _factor: tuple = field(repr=False, default=None)
    _alpha: np.ndarray = field(repr=False, default=None)

    def predict(self, candidates) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (in objective units) at ``candidates``."""
        c = np.atleast_2d(np.asarray(candidates, dtype=float))
        sv = self.signal_variance / self.scale**2
        # the stored factor is of the unit-variance correlation matrix
        r = _sqexp(c, self.points, self.length_scales)
        mu = self.mean + self.scale * sv * (r @ self._alpha)
        v = solve_triangular(self._factor[0], r.T, lower=True, check_finite=False)
        var = sv * (1.0 - np.sum(v * v, axis=0))
        return mu, np.maximum(var, 0.0) * self.scale**2

    @property
    def best(self) -> float:
        return float(self.values.max())


def _dedupe(points, values):
    keys = np.round(points, 12)
    order = np.lexsort((-values, keys[:, 1], keys[:, 0]))
    keys, points, values = keys[order], points[order], values[order]
    first = np.ones(len(points), dtype=bool)
    first[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    return points[first], values[first]


def surrogate_fit(points, values) -> SurrogateModel:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    if len(points) != len(values) or len(values) < 1:
        raise ValueError("points and values must be non-empty and of equal length")
    if not np.all(np.isfinite(values)):
        raise ValueError("surrogate values must be finite")
    points, values = _dedupe(points, values)
    mean = float(values.mean())
    scale = float(values.std())
    if scale == 0 or not np.isfinite(scale):
        scale = 1.0
    z = (values - mean) / scale
    n = len(z)

    # signal variance only scales the kernel, so factor each length-scale pair once
    # and score every variance analytically from that factorization
    sq = [(points[:, None, i] - points[None, :, i]) ** 2 for i in range(2)]
    pairs = np.array(list(itertools.product(LENGTH_SCALE_GRID, LENGTH_SCALE_GRID)))
    R = np.exp(-0.5 * (sq[0][None] / pairs[:, 0, None, None] ** 2 + sq[1][None] / pairs[:, 1, None, None] ** 2))
    R[:, np.arange(n), np.arange(n)] += NUGGET
    best = None
    for ls, Rj in zip(pairs, R):
        try:
            factor = cho_factor(Rj, lower=True)
        except np.linalg.LinAlgError:
            continue
        u = cho_solve(factor, z)
        quad = z @ u
        logdet = 2 * np.sum(np.log(np.diag(factor[0])))
        for sv in SIGNAL_VARIANCE_GRID:
            loglik = -0.5 * quad / sv - 0.5 * (logdet + n * math.log(sv)) - 0.5 * n * math.log(2 * math.pi)
            if best is None or loglik > best[0]:
                best = (loglik, ls, sv, factor, u)
    if best is None:
        raise np.linalg.LinAlgError("no kernel setting gave a positive definite covariance")
    _, ls, sv, factor, u = best
    alpha = u / sv
    return SurrogateModel(
        points=points,
        values=values,
        length_scales=ls,
        signal_variance=sv * scale**2,
        nugget=NUGGET * sv * scale**2,
        mean=mean,
        scale=scale,
        _factor=factor,
        _alpha=alpha,
    )


def expected_improvement(model: SurrogateModel, candidates, best: float | None = None) -> np.ndarray:
    """Expected gain over ``best`` (default: best observed value) under the posterior."""
    best = model.best if best is None else best
    mu, var = model.predict(candidates)
    return ei_from_moments(mu, np.sqrt(var), best)


def ei_from_moments(mu, sigma, best) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gain = mu - best
    pos = sigma > 0
    z = np.where(pos, gain / np.where(pos, sigma, 1.0), 0.0)
    out = np.where(pos, gain * norm.cdf(z) + sigma * norm.pdf(z), 0.0)
    return np.maximum(out, 0.0)


def candidate_lattice(size: int = LATTICE_SIZE) -> np.ndarray:
    g = np.linspace(0.0, 1.0, size)
    return np.array(np.meshgrid(g, g, indexing="ij")).reshape(2, -1).T


@dataclass
class OptimizationResult:
    w_h: float
    w_v: float
    best_value: float
    trace: list = field(default_factory=list)

    @property
    def points(self) -> np.ndarray:
        return np.array([row["u"] for row in self.trace])


def optimize_weights(
    objective: Callable[[float, float], float],
    space: SearchSpace | None = None,
    init: int = 30,
    iters: int = 35,
    seed: int = 0,
    initial_points=None,
) -> OptimizationResult:
    """Maximize ``objective(w_h, w_v)`` with ``init`` design points then ``iters`` EI steps.

    ``initial_points`` (unit-square coordinates) replaces the random design,
    e.g. to warm-start from an earlier search. Points where the objective
    raises or returns a non-finite value are recorded as ``-inf``.
    """
    space = space or SearchSpace()
    if init < 1 or iters < 0:
        raise ConfigError("init must be >= 1 and iters >= 0")
    design = sample_initial(space, init, seed)
    if initial_points is not None:
        given = np.clip(np.asarray(initial_points, dtype=float)[:init], 0.0, 1.0)
        design[: len(given)] = given
    # separate stream for tie-breaking picks when EI is flat
    rng = np.random.default_rng([seed, 1])
    lattice = candidate_lattice()
    trace = []
    best = -np.inf

    def evaluate(u):
        nonlocal best
        w_h, w_v = space.to_weights(u)
        try:
            value = float(objective(w_h, w_v))
        except Exception as exc:  # any failing point is scored, not fatal
            log.warning("objective failed at w_h=%.4g, w_v=%.4g: %s", w_h, w_v, exc)
            value = -np.inf
        if not np.isfinite(value):
            value = -np.inf
        best = max(best, value)
        trace.append(
            {
                "iteration": len(trace),
                "u": np.array(u, dtype=float),
                "w_h": w_h,
                "w_v": w_v,
                "r2_val": value,
                "best_so_far": best,
            }
        )

    for u in design:
        evaluate(u)

    for _ in range(iters):
        pts = np.array([row["u"] for row in trace])
        vals = np.array([row["r2_val"] for row in trace])
        finite = np.isfinite(vals)
        if finite.any():
            vals = np.where(finite, vals, vals[finite].min())
        else:
            vals = np.zeros_like(vals)
        model = surrogate_fit(pts, vals)
        incumbent = pts[int(np.argmax(vals))]
        local = np.clip(incumbent + np.array(np.meshgrid(NEIGHBOURHOOD, NEIGHBOURHOOD)).reshape(2, -1).T, 0, 1)
        cands = np.vstack([lattice, local])
        ei = expected_improvement(model, cands, model.best)
        if np.max(ei) > 0:
            nxt = cands[int(np.argmax(ei))]
        else:
            nxt = lattice[rng.integers(len(lattice))]
        evaluate(nxt)

    values = np.array([row["r2_val"] for row in trace])
    i = int(np.argmax(values))
    return OptimizationResult(trace[i]["w_h"], trace[i]["w_v"], float(values[i]), trace)


def trace_rows(result: OptimizationResult) -> list[dict]:
    """Trace in the exported column layout."""
    return [
        {k: row[k] for k in ("iteration", "w_h", "w_v", "r2_val", "best_so_far")} for row in result.trace
    ]
