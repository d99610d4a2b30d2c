"""Domain types and index arithmetic shared across the package.

Coefficients live on a (lag, day-of-year) grid flattened time-major:
``k = t * D + s``. Everything is 0-based internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

ANOMALY_MEAN_TOL = 1e-10
NO_EFFECT = -1


class HflmError(Exception):
    """Base class for package errors."""


class ConfigError(HflmError, ValueError):
    pass


class DataError(HflmError, ValueError):
    pass


class NumericalError(HflmError, ArithmeticError):
    pass


class PanelKind(str, Enum):
    RAW = "raw"
    ANOMALY = "anomaly"


@dataclass(frozen=True)
class PanelSpec:
    """Dimensions of a periodic panel: period ``T``, lag count ``D``, replicates ``n``."""

    period_length: int
    max_lag_count: int
    replicate_count: int

    def __post_init__(self):
        for name in ("period_length", "max_lag_count", "replicate_count"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if self.max_lag_count > self.observation_count:
            raise ConfigError(
                f"max_lag_count={self.max_lag_count} exceeds observation_count={self.observation_count}"
            )
        if self.usable_rows < 1:
            raise ConfigError("panel has no usable rows")

    @property
    def T(self) -> int:
        return self.period_length

    @property
    def D(self) -> int:
        return self.max_lag_count

    @property
    def n(self) -> int:
        return self.replicate_count

    @property
    def coefficient_count(self) -> int:
        return self.max_lag_count * self.period_length

    @property
    def observation_count(self) -> int:
        return self.replicate_count * self.period_length

    @property
    def usable_rows(self) -> int:
        return self.observation_count - (self.max_lag_count - 1)


def flat_index(s: int, t: int, spec: PanelSpec) -> int:
    """Position of coefficient ``beta(s, t)`` in the flat vector."""
    if not 0 <= s < spec.D:
        raise IndexError(f"lag s={s} outside [0, {spec.D})")
    if not 0 <= t < spec.T:
        raise IndexError(f"day t={t} outside [0, {spec.T})")
    return t * spec.D + s


def unflat_index(k: int, spec: PanelSpec) -> tuple[int, int]:
    """Inverse of :func:`flat_index`; returns ``(s, t)``."""
    if not 0 <= k < spec.coefficient_count:
        raise IndexError(f"flat index k={k} outside [0, {spec.coefficient_count})")
    t, s = divmod(k, spec.D)
    return s, t


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SeriesPanel:
    """One series over ``n`` replicates of ``T`` periods, flattened replicate-major."""

    spec: PanelSpec
    values: np.ndarray
    kind: PanelKind = PanelKind.RAW

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "kind", PanelKind(self.kind))
        if self.values.ndim != 1 or self.values.size != self.spec.observation_count:
            raise DataError(
                f"panel length {self.values.size} != n*T = {self.spec.observation_count}"
            )

    def as_grid(self) -> np.ndarray:
        """Values reshaped to ``(n, T)``."""
        return self.values.reshape(self.spec.n, self.spec.T)


@dataclass(frozen=True, eq=False)
class CoefficientSurface:
    spec: PanelSpec
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", _frozen(self.b))
        if self.b.shape != (self.spec.coefficient_count,):
            raise DataError(f"surface length {self.b.size} != D*T = {self.spec.coefficient_count}")
        if not np.all(np.isfinite(self.b)):
            raise DataError("surface has non-finite entries")

    def __getitem__(self, st: tuple[int, int]) -> float:
        s, t = st
        return float(self.b[flat_index(s, t, self.spec)])

    def as_grid(self) -> np.ndarray:
        """Coefficients as a ``(D, T)`` array indexed ``[s, t]``."""
        return self.b.reshape(self.spec.T, self.spec.D).T

    @classmethod
    def from_grid(cls, spec: PanelSpec, grid) -> "CoefficientSurface":
        grid = np.asarray(grid, dtype=float)
        if grid.shape != (spec.D, spec.T):
            raise DataError(f"grid shape {grid.shape} != (D, T) = {(spec.D, spec.T)}")
        return cls(spec, grid.T.ravel())

    @classmethod
    def zeros(cls, spec: PanelSpec) -> "CoefficientSurface":
        return cls(spec, np.zeros(spec.coefficient_count))


@dataclass(frozen=True, eq=False)
class LagFunction:
    """Largest lag with a nonzero effect at each day, or ``NO_EFFECT`` (-1)."""

    spec: PanelSpec
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", _frozen(self.delta, dtype=int))
        if self.delta.shape != (self.spec.T,):
            raise DataError(f"lag function length {self.delta.size} != T = {self.spec.T}")
        if np.any(self.delta < NO_EFFECT) or np.any(self.delta >= self.spec.D):
            raise DataError(f"lag values must lie in [-1, {self.spec.D - 1}]")


@dataclass(frozen=True)
class FitConfig:
    """Settings for one run of the estimation pipeline.

    ``w_h``/``w_v`` left as ``None`` are chosen by Bayesian optimization;
    ``q`` left as ``None`` is chosen at the knee-onset of the threshold curve.
    """

    w_h: float | None = None
    w_v: float | None = None
    q: float | None = None
    solver_rel_tol: float = 1e-10
    hyperopt_init_count: int = 30
    hyperopt_iter_count: int = 35
    log_wh_bounds: tuple[float, float] = (10.0, 20.0)
    log_wv_bounds: tuple[float, float] = (-5.0, 15.0)
    threshold_grid_size: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("w_h", "w_v"):
            value = getattr(self, name)
            if value is not None and not (np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be > 0, got {value!r}")
        if self.q is not None and not (np.isfinite(self.q) and self.q >= 0):
            raise ConfigError(f"q must be >= 0, got {self.q!r}")
        if not self.solver_rel_tol > 0:
            raise ConfigError("solver_rel_tol must be > 0")
        if self.hyperopt_init_count < 1 or self.hyperopt_iter_count < 1:
            raise ConfigError("hyperopt counts must be >= 1")
        if self.threshold_grid_size < 5:
            raise ConfigError("threshold_grid_size must be >= 5")
        for name in ("log_wh_bounds", "log_wv_bounds"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigError(f"{name} must be finite and ordered, got {(lo, hi)}")


@dataclass(frozen=True, eq=False)
class FitResult:
    surface: CoefficientSurface
    delta: LagFunction
    support: np.ndarray
    weights: tuple[float, float]
    threshold: float
    r2_whole: float
    r2_validation: float
    diagnostics: dict = field(default_factory=dict)


def validate_panel(panel: SeriesPanel) -> list[str]:
    """Return every invariant violation of ``panel``; an empty list means ok."""
    problems = []
    values = np.asarray(panel.values, dtype=float)
    if values.size != panel.spec.observation_count:
        problems.append(
            f"length mismatch: {values.size} values for n*T = {panel.spec.observation_count}"
        )
        return problems
    bad = np.flatnonzero(~np.isfinite(values))
    problems.extend(f"non-finite at index {i}" for i in bad)
    if panel.kind is PanelKind.ANOMALY and bad.size == 0:
        means = values.reshape(panel.spec.n, panel.spec.T).mean(axis=0)
        off = np.flatnonzero(np.abs(means) > ANOMALY_MEAN_TOL)
        problems.extend(f"seasonal mean nonzero at day {t}: {means[t]:.3g}" for t in off)
    return problems
