"""Evaluation criteria for predictions, coefficient surfaces and lag functions."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import CoefficientSurface, DataError, HflmError, LagFunction


class MetricError(HflmError, ValueError):
    pass


@dataclass
class MetricReport:
    r2: float | None = None
    beta_r2: float | None = None
    delta_bias: float | None = None
    delta_corr: float | None = None

    def to_json(self, **extra) -> str:
        payload = {k: _clean(v) for k, v in asdict(self).items()}
        payload.update(extra)
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        data = json.loads(text)
        return cls(**{k: data.get(k) for k in ("r2", "beta_r2", "delta_bias", "delta_corr")})


def _clean(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def r2(observed, predicted) -> float:
    """``1 - SSE / SST`` of ``predicted`` against ``observed``."""
    obs = np.asarray(observed, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    if obs.shape != pred.shape or obs.ndim != 1 or obs.size < 2:
        raise MetricError("r2 needs two equal-length 1-D arrays with at least 2 entries")
    total = np.sum((obs - obs.mean()) ** 2)
    if total == 0:
        raise MetricError("r2 undefined: observed values have zero variance")
    return float(1.0 - np.sum((obs - pred) ** 2) / total)


def beta_r2(truth: CoefficientSurface, est: CoefficientSurface) -> float:
    """R^2 of an estimated surface against the true one, summed over the grid."""
    if truth.spec != est.spec:
        raise DataError(f"surface specs differ: {truth.spec} vs {est.spec}")
    b, bh = truth.b, est.b
    total = np.sum((b - b.mean()) ** 2)
    if total == 0:
        raise MetricError("beta_r2 undefined: true surface is constant")
    return float(1.0 - np.sum((b - bh) ** 2) / total)


def _lags(truth: LagFunction, est: LagFunction):
    if truth.spec.T != est.spec.T:
        raise DataError(f"lag functions cover {truth.spec.T} and {est.spec.T} days")
    return truth.delta.astype(float), est.delta.astype(float)


def delta_bias(truth: LagFunction, est: LagFunction) -> float:
    """Mean estimated lag minus mean true lag, in time steps. The -1 sentinel counts as a value."""
    d, dh = _lags(truth, est)
    return float(dh.mean() - d.mean())


def delta_corr(truth: LagFunction, est: LagFunction) -> float:
    d, dh = _lags(truth, est)
    if np.ptp(d) == 0 or np.ptp(dh) == 0:
        raise MetricError("delta_corr undefined: constant sequence")
    return float(np.corrcoef(d, dh)[0, 1])


def evaluate(
    truth: CoefficientSurface,
    est: CoefficientSurface,
    truth_delta: LagFunction,
    est_delta: LagFunction,
) -> tuple[MetricReport, dict]:
    """Every criterion that can be computed; failures come back as messages."""
    report, errors = MetricReport(), {}
    for name, fn, args in (
        ("beta_r2", beta_r2, (truth, est)),
        ("delta_bias", delta_bias, (truth_delta, est_delta)),
        ("delta_corr", delta_corr, (truth_delta, est_delta)),
    ):
        try:
            setattr(report, name, fn(*args))
        except MetricError as exc:
            errors[name] = str(exc)
    return report, errors
