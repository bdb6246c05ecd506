"""Sparse complex linear solvers for the per-harmonic Helmholtz systems.

The default is right-preconditioned BiCGStab with an ILU(0) preconditioner.
For Helmholtz operators the incomplete factorisation is taken of the
complex-shifted operator (``kappa^2 -> (1 - 0.5 i) kappa^2``); ILU(0) of the
indefinite operator itself is numerically unstable once ``kappa * diameter``
reaches a few tens.
``direct`` uses a sparse LU factorisation and ``dense`` a dense LAPACK solve
(small systems only). A prepared :class:`LinearSolver` keeps its
preconditioner or factorisation, so repeated solves with one operator
(one per fixed-point sweep) pay the setup cost once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

METHODS = ("bicgstab", "direct", "dense")
PRECONDITIONERS = ("none", "diagonal", "ilu0")
DENSE_LIMIT = 2000


class SolverError(RuntimeError):
    """A linear solve did not reach its tolerance.

    ``x`` holds the best iterate found and ``residual`` its relative residual.
    """

    def __init__(self, message, x=None, residual=np.inf, iterations=0):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


class BreakdownError(SolverError):
    """The Krylov recurrence broke down (a vanishing inner product)."""


@dataclass(frozen=True)
class SolverOptions:
    method: str = "bicgstab"
    tol: float = 1e-10
    max_iterations: int = 5000
    preconditioner: str = "ilu0"
    fallback: bool = True  # switch to sparse LU when the Krylov solve fails
    # ILU(0) is taken of the operator with kappa^2 scaled by (1 - i shift); 0 factors A itself
    shift: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; choose from {METHODS}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not 0 < self.tol < 1:
            raise ValueError("solver tolerance must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.shift < 0:
            raise ValueError("preconditioner shift must be non-negative")


class SolveResult(NamedTuple):
    x: np.ndarray
    residual: float
    iterations: int


def ilu0(A):
    """Zero fill-in incomplete LU factorisation of a CSR matrix.

    Returns ``(L, U)`` as CSR matrices on the sparsity pattern of ``A``;
    ``L`` has an implicit unit diagonal and is returned strictly lower.
    """
    A = sp.csr_matrix(A, dtype=complex, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, A.data
    diag = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        row = indices[indptr[i]:indptr[i + 1]]
        hit = np.searchsorted(row, i)
        if hit < len(row) and row[hit] == i:
            diag[i] = indptr[i] + hit
    if np.any(diag < 0):
        raise SolverError(f"ILU(0) needs a structurally nonzero diagonal (row {int(np.argmin(diag))})")

    ind = indices.tolist()
    val = data.tolist()
    ptr = indptr.tolist()
    dg = diag.tolist()
    marker = [-1] * n
    for i in range(n):
        lo, hi = ptr[i], ptr[i + 1]
        for jj in range(lo, hi):
            marker[ind[jj]] = jj
        for kk in range(lo, dg[i]):
            k = ind[kk]
            pivot = val[dg[k]]
            if pivot == 0:
                raise SolverError(f"zero pivot in ILU(0) at row {k}")
            lik = val[kk] / pivot
            val[kk] = lik
            for jj in range(dg[k] + 1, ptr[k + 1]):
                pos = marker[ind[jj]]
                if pos >= 0:
                    val[pos] -= lik * val[jj]
        for jj in range(lo, hi):
            marker[ind[jj]] = -1
        if val[dg[i]] == 0:
            raise SolverError(f"zero pivot in ILU(0) at row {i}")
    F = sp.csr_matrix((np.array(val, dtype=complex), indices.copy(), indptr.copy()), shape=A.shape)
    L = sp.tril(F, k=-1, format="csr")
    U = sp.triu(F, k=0, format="csr")
    return L, U


def bicgstab(A, b, x0=None, tol=1e-10, maxiter=5000, psolve=None):
    """Right-preconditioned BiCGStab for complex systems.

    Returns ``(x, iterations)`` once ``||b - A x|| <= tol ||b||``. Raises
    :class:`BreakdownError` on a vanishing recurrence coefficient and
    :class:`SolverError` after ``maxiter`` iterations; both carry the best iterate.
    """
    if psolve is None:
        def psolve(v):
            return v
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=complex)
    r = b - A @ x
    rnorm = np.linalg.norm(r)
    target = tol * bnorm
    best_x, best_r = x.copy(), rnorm
    if rnorm <= target:
        return x, 0
    r_hat = r.copy()
    rho = alpha = omega = 1.0 + 0j
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    tiny = np.finfo(float).eps ** 2
    for it in range(1, maxiter + 1):
        rho_new = np.vdot(r_hat, r)
        if abs(rho_new) <= tiny * bnorm * bnorm:
            raise BreakdownError("BiCGStab breakdown: rho vanished", best_x, best_r / bnorm, it)
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        p_hat = psolve(p)
        v = A @ p_hat
        denom = np.vdot(r_hat, v)
        if denom == 0:
            raise BreakdownError("BiCGStab breakdown: <r_hat, v> vanished", best_x, best_r / bnorm, it)
        alpha = rho / denom
        s = r - alpha * v
        snorm = np.linalg.norm(s)
        if snorm <= target:
            x = x + alpha * p_hat
            return x, it
        s_hat = psolve(s)
        t = A @ s_hat
        tt = np.vdot(t, t)
        if tt == 0:
            raise BreakdownError("BiCGStab breakdown: t vanished", best_x, best_r / bnorm, it)
        omega = np.vdot(t, s) / tt
        if omega == 0:
            raise BreakdownError("BiCGStab breakdown: omega vanished", best_x, best_r / bnorm, it)
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        rnorm = np.linalg.norm(r)
        if rnorm < best_r:
            best_x, best_r = x.copy(), rnorm
        if rnorm <= target:
            return x, it
    raise SolverError(f"BiCGStab did not converge in {maxiter} iterations", best_x, best_r / bnorm, maxiter)


class LinearSolver:
    """A solver bound to one matrix; setup (preconditioner or factorisation) happens once."""

    def __init__(self, A, opts: SolverOptions | None = None, precond_matrix=None):
        self.opts = opts or SolverOptions()
        self.A = sp.csr_matrix(A, dtype=complex)
        self.P = self.A if precond_matrix is None else sp.csr_matrix(precond_matrix, dtype=complex)
        n, n2 = self.A.shape
        if n != n2:
            raise ValueError("matrix must be square")
        self._lu = None
        self._dense = None
        self._psolve = None
        method = self.opts.method
        if method == "dense":
            if n > DENSE_LIMIT:
                raise ValueError(f"dense solver limited to n <= {DENSE_LIMIT}, got {n}")
            self._dense = la.lu_factor(self.A.toarray())
        elif method == "direct":
            self._factorize()
        else:
            self._psolve = self._make_preconditioner()

    def _factorize(self):
        try:
            self._lu = spla.splu(self.A.tocsc())
        except RuntimeError as exc:  # exactly singular
            raise SolverError(f"singular system: {exc}") from exc

    def _make_preconditioner(self):
        kind = self.opts.preconditioner
        if kind == "none":
            return None
        if kind == "diagonal":
            d = self.A.diagonal()
            if np.any(d == 0):
                raise SolverError("diagonal preconditioner needs a nonzero diagonal")
            inv = 1.0 / d
            return lambda v: inv * v
        L, U = ilu0(self.P)
        L = (L + sp.identity(L.shape[0], dtype=complex, format="csr")).tocsr()

        def apply(v):
            y = spla.spsolve_triangular(L, v, lower=True, unit_diagonal=True)
            return spla.spsolve_triangular(U, y, lower=False)
        return apply

    def residual(self, x, b) -> float:
        bnorm = np.linalg.norm(b)
        r = np.linalg.norm(b - self.A @ x)
        return float(r / bnorm) if bnorm > 0 else float(r)

    def solve(self, b, x0=None) -> SolveResult:
        b = np.asarray(b, dtype=complex)
        if b.shape != (self.A.shape[0],):
            raise ValueError(f"right-hand side has shape {b.shape}, expected ({self.A.shape[0]},)")
        if not np.any(b):
            return SolveResult(np.zeros_like(b), 0.0, 0)
        opts = self.opts
        if self._dense is not None:
            x, its = la.lu_solve(self._dense, b), 1
        elif self._lu is not None:
            x, its = self._lu.solve(b), 1
        else:
            try:
                x, its = bicgstab(self.A, b, x0, opts.tol, opts.max_iterations, self._psolve)
            except SolverError:
                if not opts.fallback:
                    raise
                if self._lu is None:
                    self._factorize()
                x, its = self._lu.solve(b), 1
        res = self.residual(x, b)
        if not np.all(np.isfinite(x)):
            raise SolverError("solution contains non-finite values (singular system?)", x, res, its)
        if res > opts.tol:
            raise SolverError(f"relative residual {res:.3e} exceeds tolerance {opts.tol:.1e}", x, res, its)
        return SolveResult(x, res, its)


def prepare(op, opts: SolverOptions | None = None) -> LinearSolver:
    """Bind a solver to a Helmholtz operator (or a bare matrix)."""
    opts = opts or SolverOptions()
    A = getattr(op, "matrix", op)
    P = None
    if opts.method == "bicgstab" and opts.preconditioner == "ilu0" and opts.shift > 0 \
            and hasattr(op, "shifted_matrix"):
        P = op.shifted_matrix(opts.shift)
    return LinearSolver(A, opts, P)


def solve(op, rhs, opts: SolverOptions | None = None, x0=None) -> SolveResult:
    """Solve ``op.matrix x = rhs``; the returned residual is recomputed from ``A``, ``x`` and ``rhs``."""
    return prepare(op, opts).solve(rhs, x0)
