"""Doubly penalized least squares on an optional coefficient support.

Minimizes ``||Y - Z b||^2 + w_h ||D_H b||^2 + w_v ||D_V b||^2`` with the
coefficients outside ``support`` fixed at zero, through the normal equations
``(Z'Z + w_h D_H'D_H + w_v D_V'D_V) b = Z'Y``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .core import CoefficientSurface, ConfigError, NumericalError
from .operators import DesignSystem

log = logging.getLogger(__name__)

DIRECT_SIZE_LIMIT = 20_000
CG_MAX_ITER = 50_000
REFINE_STEPS = 3


class SolverError(NumericalError):
    pass


@dataclass(frozen=True, eq=False)
class NormalSystem:
    A: sparse.csc_array
    rhs: np.ndarray
    support: np.ndarray


@dataclass(eq=False)
class Gram:
    """Cross products reused across every fit on the same rows."""

    ZtZ: sparse.csr_array
    ZtY: np.ndarray
    HtH: sparse.csr_array
    VtV: sparse.csr_array
    row_count: int
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def build(cls, system: DesignSystem, D_H, D_V) -> "Gram":
        Z = system.Z
        return cls(
            ZtZ=(Z.T @ Z).tocsr(),
            ZtY=Z.T @ system.Y,
            HtH=(D_H.T @ D_H).tocsr(),
            VtV=(D_V.T @ D_V).tocsr(),
            row_count=system.row_count,
        )


def _symmetric_from_upper(A) -> sparse.csc_array:
    upper = sparse.triu(A, format="csr")
    strict = sparse.triu(A, k=1, format="csr")
    return sparse.csc_array(upper + strict.T)


def assemble_from_gram(gram: Gram, w_h: float, w_v: float, support=None) -> NormalSystem:
    if w_h < 0 or w_v < 0 or not (np.isfinite(w_h) and np.isfinite(w_v)):
        raise ConfigError(f"weights must be finite and >= 0, got w_h={w_h}, w_v={w_v}")
    K = gram.ZtY.size
    support = np.ones(K, dtype=bool) if support is None else np.asarray(support, dtype=bool)
    if support.shape != (K,):
        raise ConfigError(f"support length {support.size} != K = {K}")
    kept = np.flatnonzero(support)
    if kept.size == 0:
        raise ConfigError("empty support: no coefficients left to fit")
    if w_h == 0 and w_v == 0 and gram.row_count < kept.size:
        raise ConfigError(
            f"unpenalized fit with {gram.row_count} rows for {kept.size} coefficients is singular"
        )
    A = gram.ZtZ + w_h * gram.HtH + w_v * gram.VtV
    if kept.size < K:
        A = A[kept][:, kept]
    return NormalSystem(_symmetric_from_upper(A), np.asarray(gram.ZtY[kept], dtype=float), support)


def assemble(system: DesignSystem, D_H, D_V, w_h: float, w_v: float, support=None) -> NormalSystem:
    return assemble_from_gram(Gram.build(system, D_H, D_V), w_h, w_v, support)


def _relative_residual(A, x, rhs) -> float:
    scale = np.linalg.norm(rhs)
    r = np.linalg.norm(A @ x - rhs)
    return r / scale if scale > 0 else r


def _solve_direct(A, rhs, rel_tol):
    try:
        lu = spla.splu(
            A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
        )
    except RuntimeError as exc:
        raise NumericalError(f"normal matrix is singular: {exc}") from exc
    diag_u = lu.U.diagonal()
    if np.any(diag_u <= 0) or not np.all(np.isfinite(diag_u)):
        raise NumericalError("normal matrix is not positive definite")
    x = lu.solve(rhs)
    res = _relative_residual(A, x, rhs)
    steps = 0
    while res > rel_tol and steps < REFINE_STEPS:
        x = x + lu.solve(rhs - A @ x)
        res = _relative_residual(A, x, rhs)
        steps += 1
    return x, {"method": "direct", "iterations": steps, "residual": res}


def _solve_cg(A, rhs, rel_tol):
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise NumericalError("normal matrix is not positive definite")
    precond = sparse.diags_array(1.0 / diag)
    count = 0

    def tick(_):
        nonlocal count
        count += 1

    x, info = spla.cg(A, rhs, rtol=rel_tol, atol=0.0, maxiter=CG_MAX_ITER, M=precond, callback=tick)
    res = _relative_residual(A, x, rhs)
    if info != 0:
        raise NumericalError(f"conjugate gradient did not converge in {count} iterations (residual {res:.3e})")
    return x, {"method": "cg", "iterations": count, "residual": res}


def achievable_tolerance(A, x, rhs) -> float:
    """Residual floor set by rounding in ``A @ x`` itself."""
    scale = np.linalg.norm(rhs)
    if scale == 0:
        return 0.0
    absA = abs(A)
    return 8 * np.finfo(float).eps * np.linalg.norm(absA @ np.abs(x)) / scale


def solve(ns: NormalSystem, rel_tol: float = 1e-10, direct_limit: int = DIRECT_SIZE_LIMIT):
    """Solve the normal system; returns ``(b, info)`` with ``b`` expanded to full length.

    The residual must satisfy ``rel_tol`` unless rounding in the matrix-vector
    product alone exceeds it, in which case that floor is the bar.
    """
    rhs = ns.rhs
    if not np.any(rhs):
        x = np.zeros_like(rhs)
        info = {"method": "trivial", "iterations": 0, "residual": 0.0}
    elif rhs.size <= direct_limit:
        x, info = _solve_direct(ns.A, rhs, rel_tol)
    else:
        x, info = _solve_cg(ns.A, rhs, rel_tol)
    floor = achievable_tolerance(ns.A, x, rhs)
    info["tolerance"] = max(rel_tol, floor)
    if not np.all(np.isfinite(x)) or info["residual"] > info["tolerance"]:
        raise SolverError(
            f"solve residual {info['residual']:.3e} exceeds tolerance {info['tolerance']:.3e}"
        )
    b = np.zeros(ns.support.size)
    b[ns.support] = x
    return b, info


def fit_surface(
    system: DesignSystem,
    D_H,
    D_V,
    w_h: float,
    w_v: float,
    support=None,
    rel_tol: float = 1e-10,
    gram: Gram | None = None,
) -> CoefficientSurface:
    gram = gram if gram is not None else Gram.build(system, D_H, D_V)
    b, _ = solve(assemble_from_gram(gram, w_h, w_v, support), rel_tol)
    return CoefficientSurface(system.spec, b)


def objective(system: DesignSystem, D_H, D_V, w_h: float, w_v: float, b) -> float:
    """Penalized least-squares criterion at ``b``."""
    b = np.asarray(b, dtype=float)
    r = system.Y - system.Z @ b
    return float(r @ r + w_h * np.sum((D_H @ b) ** 2) + w_v * np.sum((D_V @ b) ** 2))
