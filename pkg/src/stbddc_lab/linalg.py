"""Minimal linear-algebra layer: LU factorizations and right-preconditioned GMRES.

Sparse matrices are plain ``scipy.sparse`` CSR matrices and dense matrices are
``numpy`` arrays; this module wraps their factorizations behind a single
:class:`Factorization` handle so the rest of the package never touches solver
internals directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericallySingular, StructurallySingular

#: Relative pivot threshold below which a factorization is declared singular.
PIVOT_RTOL = 1e-14


class Factorization:
    """Opaque handle for a factorized square matrix.

    Solves reproduce ``A^{-1} b`` (or ``A^{-T} b`` with ``transpose=True``) to
    near machine precision for well-conditioned matrices.
    """

    def __init__(self, handle, n: int, kind: str):
        self._handle = handle
        self.n = n
        self.kind = kind  # "sparse" | "dense"
        self.singular = False

    def solve(self, b: np.ndarray, transpose: bool = False) -> np.ndarray:
        if self.kind == "sparse":
            return self._handle.solve(np.asarray(b, dtype=float),
                                      trans="T" if transpose else "N")
        lu, piv = self._handle
        return sla.lu_solve((lu, piv), np.asarray(b, dtype=float),
                            trans=1 if transpose else 0)


def _check_pivots(udiag: np.ndarray, scale: float) -> None:
    if udiag.size and np.min(np.abs(udiag)) <= PIVOT_RTOL * scale:
        raise NumericallySingular(
            f"pivot {np.min(np.abs(udiag)):.3e} below threshold "
            f"{PIVOT_RTOL * scale:.3e}")


def sparse_lu_factor(a: sp.spmatrix) -> Factorization:
    """LU-factorize a square sparse matrix with partial pivoting.

    Raises :class:`StructurallySingular` or :class:`NumericallySingular`
    when the matrix cannot support accurate solves.
    """
    a = sp.csc_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix is {a.shape}, expected square")
    scale = np.max(np.abs(a.data)) if a.nnz else 0.0
    if scale == 0.0:
        raise StructurallySingular("matrix has no nonzero entries")
    try:
        handle = spla.splu(a)
    except RuntimeError as exc:  # SuperLU reports exactly singular factors
        msg = str(exc).lower()
        if "singular" in msg:
            raise NumericallySingular(str(exc)) from exc
        raise
    _check_pivots(handle.U.diagonal(), scale)
    return Factorization(handle, a.shape[0], "sparse")


def dense_lu_factor(a: np.ndarray) -> Factorization:
    """LU-factorize a small dense matrix (coarse problems, Schur complements)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix is {a.shape}, expected square")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale == 0.0:
        raise StructurallySingular("matrix has no nonzero entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a)
    _check_pivots(np.diagonal(lu), scale)
    return Factorization((lu, piv), a.shape[0], "dense")


@dataclass
class GmresConfig:
    """Stopping parameters for GMRES.

    Convergence is measured against the residual at the initial guess, i.e.
    the iteration stops once the initial residual has been reduced by
    ``tolerance``.
    """

    tolerance: float = 1e-6
    max_iterations: int = 500
    restart: int | None = None  # no restart by default

    def __post_init__(self):
        if not 0.0 < self.tolerance < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class IterationReport:
    """Per-solve convergence record."""

    iterations: int = 0
    converged: bool = False
    breakdown: bool = False
    residual_norms: list[float] = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residual_norms[-1] if self.residual_norms else 0.0


def gmres_right_preconditioned(apply_a, apply_b, b, x0=None,
                               cfg: GmresConfig | None = None):
    """Solve ``A x = b`` with GMRES, preconditioning from the right.

    ``apply_a`` and ``apply_b`` map vectors to vectors; ``apply_b`` may be
    ``None`` for unpreconditioned iterations.  Arnoldi uses classical
    Gram-Schmidt with one reorthogonalization pass; the least-squares problem
    is updated with Givens rotations, whose recurrence also provides the
    residual norm history.

    Returns ``(x, report)``.  Hitting the iteration cap returns the best
    iterate with ``report.converged = False``; a Krylov breakdown is treated
    as convergence whenever the residual passes the tolerance.
    """
    cfg = cfg or GmresConfig()
    b = np.asarray(b, dtype=float)
    n = b.size
    if apply_b is None:
        apply_b = lambda v: v
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()

    beta = float(np.linalg.norm(b - apply_a(x)))
    report = IterationReport(residual_norms=[beta])
    if beta == 0.0:
        report.converged = True
        return x, report
    target = cfg.tolerance * beta

    cycle = cfg.restart or cfg.max_iterations
    total = 0
    while True:
        r = b - apply_a(x)
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            report.converged = True
            return x, report
        if total >= cfg.max_iterations:
            report.converged = False
            return x, report

        m = min(cycle, cfg.max_iterations - total)
        basis = np.zeros((min(m, 64) + 1, n))  # grown on demand
        basis[0] = r / rnorm
        h = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = rnorm

        j = 0
        resid = rnorm
        recurrence_converged = False
        while j < m:
            # copy: operators may pass inputs through by reference
            w = np.array(apply_a(apply_b(basis[j])), dtype=float)
            # classical Gram-Schmidt with one reorthogonalization pass
            hj = basis[:j + 1] @ w
            w -= basis[:j + 1].T @ hj
            corr = basis[:j + 1] @ w
            w -= basis[:j + 1].T @ corr
            hj += corr
            h[:j + 1, j] = hj
            wnorm = float(np.linalg.norm(w))
            h[j + 1, j] = wnorm

            for i in range(j):
                tmp = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
                h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
                h[i, j] = tmp
            denom = np.hypot(h[j, j], h[j + 1, j])
            if denom == 0.0:
                # exact breakdown before this step contributed anything
                report.breakdown = True
                break
            cs[j], sn[j] = h[j, j] / denom, h[j + 1, j] / denom
            h[j, j] = denom
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]

            resid = abs(g[j + 1])
            total += 1
            j += 1
            report.residual_norms.append(min(resid, report.residual_norms[-1]))

            if resid <= target:
                recurrence_converged = True
                break
            if wnorm <= 1e-14 * denom:
                # happy/lucky breakdown: the Krylov space is invariant
                report.breakdown = True
                break
            if j >= basis.shape[0] - 1:
                grown = np.zeros((min(2 * basis.shape[0], m + 1), n))
                grown[:basis.shape[0]] = basis
                basis = grown
            basis[j] = w / wnorm

        if j > 0:
            y = sla.solve_triangular(h[:j, :j], g[:j])
            x = x + apply_b(basis[:j].T @ y)
        report.iterations = total

        if recurrence_converged:
            report.converged = True
            return x, report
        if report.breakdown:
            # invariant subspace: restarting regenerates the same space, so
            # settle on the true residual once
            final = float(np.linalg.norm(b - apply_a(x)))
            report.residual_norms[-1] = min(final, report.residual_norms[-1])
            report.converged = final <= target
            return x, report
