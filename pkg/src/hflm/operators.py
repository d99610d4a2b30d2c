"""Design matrix and difference penalties on the (lag, day) coefficient grid.

Sparse operators are plain ``scipy.sparse.csr_array`` objects.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .core import DataError, PanelKind, PanelSpec, SeriesPanel


@dataclass(frozen=True, eq=False)
class DesignSystem:
    """``Y ~ Z b`` for every global time index with a full lag window.

    ``row_global[r]`` is the global time index ``u`` of row ``r`` and
    ``row_day[r] = u mod T``.
    """

    spec: PanelSpec
    Z: sparse.csr_array
    Y: np.ndarray
    row_day: np.ndarray
    row_global: np.ndarray

    @property
    def row_count(self) -> int:
        return self.Y.size

    def rows(self, index) -> "DesignSystem":
        """Subset of rows (e.g. a chronological split)."""
        index = np.asarray(index)
        return DesignSystem(
            self.spec, self.Z[index], self.Y[index], self.row_day[index], self.row_global[index]
        )


def lag_windows(x: np.ndarray, D: int) -> np.ndarray:
    """``(N - D + 1, D)`` array whose row for global index ``u`` holds ``x[u - s]``, s = 0..D-1."""
    x = np.asarray(x, dtype=float)
    windows = np.lib.stride_tricks.sliding_window_view(x, D)
    return windows[:, ::-1].copy()


def build_design(x: SeriesPanel, y: SeriesPanel) -> DesignSystem:
    if x.spec != y.spec:
        raise DataError(f"panel specs differ: {x.spec} vs {y.spec}")
    for name, panel in (("x", x), ("y", y)):
        if panel.kind is not PanelKind.ANOMALY:
            raise DataError(f"{name} must be an anomaly panel, got {panel.kind.value}")
    spec = x.spec
    D, T = spec.D, spec.T

    row_global = np.arange(D - 1, spec.observation_count)
    row_day = row_global % T
    values = lag_windows(x.values, D)
    cols = row_day[:, None] * D + np.arange(D)[None, :]
    indptr = np.arange(0, values.size + 1, D)
    # explicit zeros are kept so every row carries exactly D stored entries
    Z = sparse.csr_array(
        (values.ravel(), cols.ravel(), indptr), shape=(row_global.size, spec.coefficient_count)
    )
    return DesignSystem(spec, Z, np.array(y.values[row_global]), row_day, row_global)


def build_horizontal_penalty(spec: PanelSpec) -> sparse.csr_array:
    """Rows ``beta(s, (t+1) mod T) - beta(s, t)`` in flat order, wrapping periodically."""
    D, T = spec.D, spec.T
    k = np.arange(spec.coefficient_count)
    s, t = k % D, k // D
    nxt = ((t + 1) % T) * D + s
    rows = np.concatenate([k, k])
    cols = np.concatenate([k, nxt])
    vals = np.concatenate([-np.ones(k.size), np.ones(k.size)])
    # T == 1 puts -1 and +1 on the same cell; summing duplicates gives an all-zero operator
    op = sparse.coo_array((vals, (rows, cols)), shape=(k.size, k.size)).tocsr()
    op.sum_duplicates()
    return op


def build_vertical_penalty(spec: PanelSpec) -> sparse.csr_array:
    """Lag differences ``beta(s+1, t) - beta(s, t)`` then one zero-top row per day.

    The first ``(D-1)*T`` rows are ordered by day then lag; the last ``T``
    rows each pin ``beta(D-1, t)`` towards zero.
    """
    D, T = spec.D, spec.T
    t = np.repeat(np.arange(T), D - 1)
    s = np.tile(np.arange(D - 1), T)
    n_diff = t.size
    diff_rows = np.arange(n_diff)
    top_rows = n_diff + np.arange(T)
    top_cols = np.arange(T) * D + (D - 1)
    rows = np.concatenate([diff_rows, diff_rows, top_rows])
    cols = np.concatenate([t * D + s, t * D + s + 1, top_cols])
    vals = np.concatenate([-np.ones(n_diff), np.ones(n_diff), np.ones(T)])
    return sparse.coo_array((vals, (rows, cols)), shape=(D * T, D * T)).tocsr()


def export_triplets(op, path) -> None:
    """Write the stored entries of a sparse operator as ``row,col,value`` CSV."""
    coo = sparse.coo_array(op)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "value"])
        for i in order:
            writer.writerow([int(coo.row[i]), int(coo.col[i]), repr(float(coo.data[i]))])
