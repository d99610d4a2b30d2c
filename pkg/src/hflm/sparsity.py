"""Nested tail group norms, thresholding, lag extraction and knee-onset selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .core import NO_EFFECT, CoefficientSurface, HflmError, LagFunction, PanelSpec
from .solver import Gram, assemble_from_gram, solve

KNEE_PROMINENCE = 0.01


class StructureError(HflmError, ValueError):
    pass


class NoKneeError(HflmError, ValueError):
    pass


class NothingToThresholdError(HflmError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GroupNormGrid:
    """``G[s, t]`` = sum of squared coefficients at lags ``s..D-1`` on day ``t``."""

    spec: PanelSpec
    G: np.ndarray


@dataclass(frozen=True, eq=False)
class ThresholdCurve:
    q_grid: np.ndarray
    r2: np.ndarray
    support_sizes: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.q_grid.size == self.r2.size == self.support_sizes.size):
            raise ValueError("threshold curve arrays differ in length")
        if np.any(np.diff(self.q_grid) <= 0):
            raise ValueError("q grid must be strictly ascending")


def group_norms(surface: CoefficientSurface) -> GroupNormGrid:
    sq = surface.as_grid() ** 2
    G = np.cumsum(sq[::-1], axis=0)[::-1]
    return GroupNormGrid(surface.spec, G)


def apply_threshold(norms: GroupNormGrid, q: float) -> np.ndarray:
    """Support mask (flat order): per day, zero every lag from the first ``G < q`` upward."""
    if q < 0:
        raise ValueError(f"q must be >= 0, got {q}")
    below = norms.G < q
    # nested norms make this a cumulative "or" going up the lags
    zeroed = np.logical_or.accumulate(below, axis=0)
    return ~zeroed.T.ravel()


def extract_delta(support, spec: PanelSpec) -> LagFunction:
    """Largest supported lag per day, ``-1`` where nothing is supported."""
    grid = np.asarray(support, dtype=bool).reshape(spec.T, spec.D)
    counts = grid.sum(axis=1)
    lags = np.arange(spec.D)
    prefix = lags[None, :] < counts[:, None]
    if not np.array_equal(grid, prefix):
        bad = np.flatnonzero(np.any(grid != prefix, axis=1))
        raise StructureError(f"support is not a lower block of lags on day(s) {bad[:10].tolist()}")
    return LagFunction(spec, np.where(counts > 0, counts - 1, NO_EFFECT))


def delta_from_surface(surface: CoefficientSurface) -> LagFunction:
    """Largest lag with a nonzero coefficient per day, read straight off the surface."""
    nonzero = surface.as_grid() != 0
    top = surface.spec.D - 1 - np.argmax(nonzero[::-1], axis=0)
    return LagFunction(surface.spec, np.where(nonzero.any(axis=0), top, NO_EFFECT))


def whole_r2(Y, fitted) -> float:
    resid = np.sum((Y - fitted) ** 2)
    total = np.sum((Y - Y.mean()) ** 2)
    return float(1.0 - resid / total)


def threshold_curve(
    system,
    gram: Gram,
    weights: tuple[float, float],
    surface: CoefficientSurface,
    grid_size: int = 50,
    rel_tol: float = 1e-10,
) -> ThresholdCurve:
    """Refit on the thresholded support along a geometric q grid and record whole-data R^2.

    ``system``/``gram`` describe the rows the refits use and score.
    """
    norms = group_norms(surface)
    positive = norms.G[norms.G > 0]
    if positive.size == 0:
        raise NothingToThresholdError("nothing to threshold: surface is identically zero")
    lo, hi = positive.min(), positive.max()
    q_grid = np.geomspace(lo, hi, grid_size) if hi > lo else np.array([lo])
    if q_grid.size < grid_size:
        raise NothingToThresholdError("nothing to threshold: group norms are all equal")
    w_h, w_v = weights
    r2 = np.empty(grid_size)
    sizes = np.empty(grid_size, dtype=int)
    for i, q in enumerate(q_grid):
        support = apply_threshold(norms, q)
        sizes[i] = support.sum()
        if sizes[i] == 0:
            fitted = np.zeros_like(system.Y)
        else:
            b, _ = solve(assemble_from_gram(gram, w_h, w_v, support), rel_tol)
            fitted = system.Z @ b
        r2[i] = whole_r2(system.Y, fitted)
    return ThresholdCurve(q_grid, r2, sizes)


def _chord_gap(x, y, lo, hi):
    """Height of the curve above the straight line joining points ``lo`` and ``hi``."""
    xs, ys = x[lo : hi + 1], y[lo : hi + 1]
    if x[hi] == x[lo]:
        return np.zeros_like(ys)
    chord = y[lo] + (y[hi] - y[lo]) * (xs - x[lo]) / (x[hi] - x[lo])
    return ys - chord


def _peaks(gap):
    idx, _ = find_peaks(gap, prominence=KNEE_PROMINENCE)
    return [int(i) for i in idx if gap[i] > 0]


def menger_curvature(x, y) -> np.ndarray:
    """Curvature of the circle through each interior point and its neighbours (0 at the ends)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    k = np.zeros(x.size)
    ax, ay = x[:-2], y[:-2]
    bx, by = x[1:-1], y[1:-1]
    cx, cy = x[2:], y[2:]
    area2 = np.abs((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))
    ab = np.hypot(bx - ax, by - ay)
    bc = np.hypot(cx - bx, cy - by)
    ca = np.hypot(ax - cx, ay - cy)
    denom = ab * bc * ca
    with np.errstate(divide="ignore", invalid="ignore"):
        k[1:-1] = np.where(denom > 0, 2 * area2 / denom, 0.0)
    return k


def find_knees(r2) -> tuple[list[int], dict]:
    """Grid indices of the knees of a decreasing R^2 curve, smallest first.

    Works in the unit square (index on x, R^2 on y). Knees are local maxima of
    the curve's height above its end-to-end chord with prominence of at least
    ``KNEE_PROMINENCE``. Without any, the point of largest Menger curvature
    stands in and ``knee_fallback`` is set.
    """
    r2 = np.asarray(r2, dtype=float)
    m = r2.size
    if m < 5:
        raise ValueError("knee detection needs at least 5 points")
    span = r2.max() - r2.min()
    if not np.isfinite(span) or span == 0:
        raise NoKneeError("no knee: curve is constant")
    x = np.arange(m) / (m - 1)
    y = (r2 - r2.min()) / span
    knees = _peaks(_chord_gap(x, y, 0, m - 1))
    info = {"knee_count": len(knees), "knee_fallback": False}
    if not knees:
        bend = menger_curvature(x, y)[1:-1]
        # rounding noise on a straight line is not curvature; ties go to the first interior point
        bend = np.where(bend > 1e-9, bend, 0.0)
        knees = [1 + int(np.argmax(bend))]
        info["knee_fallback"] = True
    return sorted(knees), info


def knee_onset(curve: ThresholdCurve) -> tuple[float, dict]:
    """``q`` at the first knee of the threshold curve, with detection diagnostics."""
    knees, info = find_knees(curve.r2)
    info["knee_index"] = knees[0]
    return float(curve.q_grid[knees[0]]), info
