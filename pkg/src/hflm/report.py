"""Static figures rendered next to the CSV outputs of the command-line tool."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .core import NO_EFFECT, CoefficientSurface, LagFunction  # noqa: E402
from .sparsity import ThresholdCurve  # noqa: E402

DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=DPI, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_surface(surface: CoefficientSurface, path, delta: LagFunction | None = None, title: str = "") -> Path:
    """Heatmap of the coefficient surface (lag up, day across), with the lag function overlaid."""
    grid = surface.as_grid()
    spec = surface.spec
    bound = float(np.max(np.abs(grid))) or 1.0
    fig, ax = plt.subplots(figsize=(8, 4))
    im = ax.imshow(
        grid,
        origin="lower",
        aspect="auto",
        cmap="RdBu_r",
        vmin=-bound,
        vmax=bound,
        extent=(0.5, spec.T + 0.5, -0.5, spec.D - 0.5),
    )
    if delta is not None:
        d = delta.delta.astype(float)
        d[d == NO_EFFECT] = np.nan
        ax.step(np.arange(1, spec.T + 1), d, where="mid", color="k", lw=1.2, label="max lag")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("day of period")
    ax.set_ylabel("lag")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="coefficient")
    return _save(fig, path)


def plot_threshold_curve(curve: ThresholdCurve, path, q: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogx(curve.q_grid, curve.r2, "o-", ms=3)
    if q is not None and q > 0:
        ax.axvline(q, color="r", ls="--", lw=1, label=f"q = {q:.3g}")
        ax.legend(fontsize=8)
    ax.set_xlabel("threshold q")
    ax.set_ylabel("whole-data R$^2$")
    return _save(fig, path)


def plot_trace(trace: pd.DataFrame, path) -> Path:
    """Objective value per evaluation and the running best."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(trace["iteration"], trace["r2_val"], ".", label="evaluation")
    ax.plot(trace["iteration"], trace["best_so_far"], "-", label="best so far")
    ax.set_xlabel("evaluation")
    ax.set_ylabel("validation R$^2$")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_study(table: pd.DataFrame, path) -> Path:
    """Per-replicate distributions of the three recovery criteria."""
    names = [("beta_r2", "coefficient R$^2$"), ("delta_bias", "lag bias"), ("delta_corr", "lag correlation")]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.5))
    for ax, (col, label) in zip(axes, names):
        values = pd.to_numeric(table.get(col), errors="coerce").dropna() if col in table else pd.Series(dtype=float)
        if len(values):
            ax.boxplot(values.to_numpy(), widths=0.5)
            ax.plot(np.ones(len(values)), values, "k.", alpha=0.5)
        ax.set_title(label)
        ax.set_xticks([])
    return _save(fig, path)
