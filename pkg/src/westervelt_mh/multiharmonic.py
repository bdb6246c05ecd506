"""Multiharmonic coupling algebra and the fixed-point iteration over coupled Helmholtz solves.

Pressure is represented as ``p(t, x) = Re{ sum_{m=1}^{M} u_m(x) exp(i m omega t) }``
(the m = 0 component vanishes). Harmonic ``m`` solves

    -kappa_m^2 m^2 u_m - Laplace(u_m) = -kappa_m^2 m^2 (eta / 2 * C_m(u) + h_m)

with ``C_m`` the projection bracket of the squared signal, computed from
the previous sweep.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .medium import MediumParams, eta_from_BA  # noqa: F401  (re-exported)
from .solvers import SolverError, SolverOptions, prepare
from .sources import SourceSpec, assemble_source, elements_touching

log = logging.getLogger(__name__)

STOP_RULES = ("aggregate", "per_harmonic", "none")
MAX_SOURCE_REFINE = 64


@dataclass
class HarmonicSet:
    """Nodal coefficients ``u_1 .. u_M`` (row ``m - 1`` holds ``u_m``) at fundamental ``omega``."""

    coeffs: np.ndarray
    omega: float = 1.0

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))

    @classmethod
    def zeros(cls, M, n, omega=1.0):
        return cls(np.zeros((M, n), dtype=complex), omega)

    @property
    def M(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n(self) -> int:
        return self.coeffs.shape[1]

    def __getitem__(self, m):
        """``u_m`` for ``1 <= m <= M``; ``u_0`` is zero."""
        if m == 0:
            return np.zeros(self.n, dtype=complex)
        if not 1 <= m <= self.M:
            raise IndexError(f"harmonic {m} outside 1..{self.M}")
        return self.coeffs[m - 1]

    def __sub__(self, other):
        return HarmonicSet(self.coeffs - other.coeffs, self.omega)

    def scaled(self, s):
        return HarmonicSet(self.coeffs * s, self.omega)


def coupling_bracket(values, m: int):
    """Projection bracket for harmonic ``m`` from pointwise harmonic values.

    ``values`` has shape ``(M, ...)`` with ``values[j - 1] = u_j``. Returns

        sum_{k=1}^{m-1} u_k u_{m-k} + 2 sum_{j=1}^{M-m} conj(u_j) u_{j+m},

    the general projection formula with ``u_0 = 0``; ``Re{C_m e^{i m w t}} / 2``
    is then the harmonic-``m`` part of ``p^2``.
    """
    u = np.asarray(values)
    M = u.shape[0]
    if not 1 <= m <= M:
        raise IndexError(f"harmonic {m} outside 1..{M}")
    out = np.zeros(u.shape[1:], dtype=complex)
    for k in range(1, m):
        out += u[k - 1] * u[m - k - 1]
    for j in range(1, M - m + 1):
        out += 2.0 * np.conj(u[j - 1]) * u[j + m - 1]
    return out


def coupling_term(prev, m: int, mesh=None, points="vertices", rule="deg3"):
    """Coupling bracket of harmonic ``m`` evaluated from ``prev``.

    ``prev`` is a :class:`HarmonicSet` or an array ``(M, ...)`` of values.
    With ``points="quadrature"`` each ``u_j`` is P1-interpolated to the
    quadrature points of ``mesh`` before the products are formed.
    """
    values = prev.coeffs if isinstance(prev, HarmonicSet) else np.asarray(prev)
    if points == "quadrature":
        if mesh is None:
            raise ValueError("quadrature evaluation needs the mesh")
        bary, _ = fem.triangle_rule(rule)
        values = fem.interpolate_at(mesh, values, bary)
    elif points != "vertices":
        raise ValueError(f"unknown evaluation point set {points!r}")
    return coupling_bracket(values, m)


def _refine_level(mesh, elements, disks):
    if len(elements) == 0:
        return 1
    p = mesh.vertices[mesh.triangles[elements]]
    diam = np.max(np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2))
    radius = min(r for _, r in disks)
    return int(min(MAX_SOURCE_REFINE, max(1, math.ceil(diam / (radius / 4)))))


def source_load(mesh, medium, source: SourceSpec, m: int, kappa2=None):
    """Load of ``-kappa_m^2 m^2 h_m``.

    Only triangles that meet a source support are integrated, with a
    sub-triangle composite rule fine enough to resolve the compact bump.
    """
    f = assemble_source(source, m)
    out = np.zeros(mesh.n_vertices, dtype=complex)
    if not f.support:
        return out
    kappa2 = medium.kappa2(mesh, m) if kappa2 is None else kappa2
    elements = elements_touching(mesh, f.support)
    if len(elements) == 0:
        return out
    level = _refine_level(mesh, elements, f.support)
    return fem.assemble_load(mesh, f, "deg3", level, elements, coeff=-(m * m) * kappa2[elements])


def coupling_load(mesh, values_qp, m, kappa2, eta, bary, weights):
    """Load of ``-kappa_m^2 m^2 eta / 2 * C_m`` from harmonic values at quadrature points."""
    C = coupling_bracket(values_qp, m)
    return fem.load_from_values(mesh, C, bary, weights, coeff=-(m * m) * kappa2 * eta / 2)


def harmonic_rhs(mesh, medium: MediumParams, prev: HarmonicSet, source: SourceSpec, m: int):
    """Right-hand side of harmonic ``m`` given the previous sweep."""
    if m < 1:
        raise ValueError("harmonic index must be >= 1")
    kappa2 = medium.kappa2(mesh, m)
    rhs = source_load(mesh, medium, source, m, kappa2)
    eta = medium.element_eta(mesh)
    if np.any(eta) and m <= prev.M and np.any(prev.coeffs):
        bary, w = fem.triangle_rule("deg3")
        values = fem.interpolate_at(mesh, prev.coeffs, bary)
        rhs = rhs + coupling_load(mesh, values, m, kappa2, eta, bary, w)
    return rhs


def consecutive_l2(mesh, a: HarmonicSet, b: HarmonicSet, mass=None) -> np.ndarray:
    """Per-harmonic ``||u_m^a - u_m^b||_{L2}``."""
    if a.coeffs.shape != b.coeffs.shape:
        raise ValueError(f"harmonic sets differ in shape: {a.coeffs.shape} vs {b.coeffs.shape}")
    M = fem.assemble_mass(mesh) if mass is None else mass
    d = a.coeffs - b.coeffs
    quad = np.real(np.einsum("mi,mi->m", d.conj(), (M @ d.T).T))
    return np.sqrt(np.maximum(quad, 0.0))


def time_samples(values, omega, times):
    """``Re{sum_m u_m e^{i m omega t}}`` for an array ``(M, ...)`` of coefficients; shape ``(nt, ...)``."""
    values = np.asarray(values)
    M = values.shape[0]
    phase = np.exp(1j * omega * np.outer(np.asarray(times, dtype=float), np.arange(1, M + 1)))
    return np.real(np.tensordot(phase, values, axes=(1, 0)))


def degeneracy_margin(mesh, medium: MediumParams, harmonics: HarmonicSet, n_time_samples=None):
    """Minimum of ``1 - 2 eta p(t, x)`` over vertices and a uniform grid over one period.

    ``eta`` is piecewise constant, so every (triangle, vertex) incidence is
    checked. Returns ``(margin, degenerate)``.
    """
    M = harmonics.M
    ns = 8 * M + 1 if n_time_samples is None else int(n_time_samples)
    if ns < 2 * M + 1:
        raise ValueError(f"need at least {2 * M + 1} time samples, got {ns}")
    eta = medium.element_eta(mesh)
    if not np.any(eta) or not np.any(harmonics.coeffs):
        return 1.0, False
    omega = medium.omega
    times = 2 * np.pi / omega * np.arange(ns) / ns
    p = time_samples(harmonics.coeffs, omega, times)  # (ns, n)
    pmax = p.max(axis=0)[mesh.triangles].max(axis=1)
    pmin = p.min(axis=0)[mesh.triangles].min(axis=1)
    worst = np.where(eta >= 0, eta * pmax, eta * pmin)
    margin = float(1.0 - 2.0 * worst.max())
    return margin, margin <= 0


@dataclass(frozen=True)
class IterationConfig:
    M: int = 4
    max_iterations: int = 15
    tol: float = 1e-8
    stop_rule: str = "aggregate"
    threads: int = 1

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("number of harmonics M must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tol > 0:
            raise ValueError("iteration tolerance must be positive")
        if self.stop_rule not in STOP_RULES:
            raise ValueError(f"stop_rule must be one of {STOP_RULES}")


@dataclass
class IterationReport:
    """Per-sweep record of the fixed-point iteration.

    Row ``k`` of every array belongs to sweep ``k + 1``; column ``m - 1`` to harmonic ``m``.
    """

    M: int
    l2_diff: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    solver_residual: list = field(default_factory=list)
    solver_iters: list = field(default_factory=list)
    degeneracy_margin: list = field(default_factory=list)
    status: str = "running"
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.l2_diff)

    @property
    def rel_l2_diff(self) -> np.ndarray:
        """Per-harmonic differences divided by the current norm of that harmonic."""
        d = np.asarray(self.l2_diff, dtype=float).reshape(-1, self.M)
        n = np.asarray(self.norms, dtype=float).reshape(-1, self.M)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(n > 0, d / np.where(n > 0, n, 1.0), 0.0)

    @property
    def aggregate_diff(self) -> np.ndarray:
        d = np.asarray(self.l2_diff, dtype=float).reshape(-1, self.M)
        n = np.asarray(self.norms, dtype=float).reshape(-1, self.M)
        top = n.max(axis=1)
        return np.where(top > 0, d.max(axis=1) / np.where(top > 0, top, 1.0), 0.0)

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "completed")

    @property
    def degenerate(self) -> bool:
        return bool(self.degeneracy_margin) and min(self.degeneracy_margin) <= 0

    def summary(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "final_aggregate_diff": float(self.aggregate_diff[-1]) if self.iterations else None,
            "final_l2_diff": [float(v) for v in self.l2_diff[-1]] if self.iterations else [],
            "min_degeneracy_margin": min(self.degeneracy_margin) if self.degeneracy_margin else None,
            "degenerate": self.degenerate,
            "message": self.message,
        }

    def to_csv(self, path) -> None:
        """Harmonic rows carry ``m`` and solver data; one row per sweep carries the margin."""
        rel = self.rel_l2_diff
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "m", "l2_diff", "rel_l2_diff", "solver_residual", "solver_iters",
                        "degeneracy_margin"])
            for k in range(self.iterations):
                for m in range(self.M):
                    w.writerow([k + 1, m + 1, repr(float(self.l2_diff[k][m])), repr(float(rel[k, m])),
                                repr(float(self.solver_residual[k][m])), int(self.solver_iters[k][m]), ""])
                if k < len(self.degeneracy_margin):
                    w.writerow([k + 1, "", "", "", "", "", repr(float(self.degeneracy_margin[k]))])


class IterationAborted(RuntimeError):
    """A linear solve failed; ``harmonics`` and ``report`` hold the partial state."""

    def __init__(self, message, harmonics, report):
        super().__init__(message)
        self.harmonics = harmonics
        self.report = report


def _stop(rule, diffs, norms, tol):
    if rule == "none":
        return False
    if rule == "aggregate":
        top = norms.max()
        return diffs.max() <= tol * top if top > 0 else not np.any(diffs)
    return bool(np.all(diffs <= tol * norms))


def iterate(mesh, medium: MediumParams, source: SourceSpec, cfg: IterationConfig | None = None,
            opts: SolverOptions | None = None, order=None, callback=None):
    """Fixed-point sweeps starting from the zero state.

    Every harmonic of sweep ``k`` is solved with a right-hand side built
    only from sweep ``k - 1``. ``order`` permutes the solve order within a
    sweep (the result does not depend on it). Returns ``(HarmonicSet, IterationReport)``.
    """
    cfg = cfg or IterationConfig()
    opts = opts or SolverOptions()
    M, n = cfg.M, mesh.n_vertices
    order = list(range(1, M + 1)) if order is None else [int(m) for m in order]
    if sorted(order) != list(range(1, M + 1)):
        raise ValueError("order must be a permutation of 1..M")

    K = fem.assemble_stiffness(mesh)
    mass = fem.assemble_mass(mesh)
    kappa2 = {m: medium.kappa2(mesh, m) for m in order}
    solvers = {}
    for m in order:
        solvers[m] = prepare(fem.build_helmholtz(mesh, medium, m, stiffness=K), opts)
    src = {m: source_load(mesh, medium, source, m, kappa2[m]) for m in order}
    eta = medium.element_eta(mesh)
    nonlinear = bool(np.any(eta))
    bary, w = fem.triangle_rule("deg3")

    prev = HarmonicSet.zeros(M, n, medium.omega)
    report = IterationReport(M)

    def solve_one(m, values_qp):
        rhs = src[m]
        if values_qp is not None:
            rhs = rhs + coupling_load(mesh, values_qp, m, kappa2[m], eta, bary, w)
        return m, solvers[m].solve(rhs, x0=prev[m] if np.any(prev[m]) else None)

    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for k in range(1, cfg.max_iterations + 1):
            values_qp = fem.interpolate_at(mesh, prev.coeffs, bary) \
                if nonlinear and np.any(prev.coeffs) else None
            new = HarmonicSet.zeros(M, n, medium.omega)
            res = np.zeros(M)
            its = np.zeros(M, dtype=int)
            try:
                if pool is not None:
                    results = list(pool.map(lambda m: solve_one(m, values_qp), order))
                else:
                    results = [solve_one(m, values_qp) for m in order]
            except SolverError as exc:
                report.status = "solver_failure"
                report.message = f"sweep {k}: {exc}"
                raise IterationAborted(report.message, prev, report) from exc
            for m, r in results:
                new.coeffs[m - 1] = r.x
                res[m - 1] = r.residual
                its[m - 1] = r.iterations

            diffs = consecutive_l2(mesh, new, prev, mass)
            norms = consecutive_l2(mesh, new, HarmonicSet.zeros(M, n), mass)
            margin, _ = degeneracy_margin(mesh, medium, new)
            report.l2_diff.append(diffs)
            report.norms.append(norms)
            report.solver_residual.append(res)
            report.solver_iters.append(its)
            report.degeneracy_margin.append(margin)
            log.info("sweep %d: l2 diff %s, margin %.6f", k, np.array2string(diffs, precision=3), margin)
            prev = new
            if callback is not None:
                callback(k, new, report)
            if margin <= 0:
                # the model itself has broken down; further sweeps only overflow
                report.status = "degenerate"
                report.message = f"sweep {k}: degeneracy margin {margin:.6g} <= 0"
                break
            if _stop(cfg.stop_rule, diffs, norms, cfg.tol):
                report.status = "converged"
                break
        else:
            report.status = "completed" if cfg.stop_rule == "none" else "max_iterations"
    finally:
        if pool is not None:
            pool.shutdown()
    return prev, report


def calibrate_source(mesh, medium: MediumParams, source: SourceSpec, target_peak: float,
                     opts: SolverOptions | None = None):
    """Rescale ``source`` so the linear first harmonic peaks at ``target_peak`` Pa.

    Returns ``(scaled_source, factor)``.
    """
    if not target_peak > 0:
        raise ValueError("calibration target must be positive")
    op = fem.build_helmholtz(mesh, medium, 1)
    rhs = source_load(mesh, medium, source, 1)
    if not np.any(rhs):
        raise ValueError("source has no first-harmonic component on this mesh; cannot calibrate")
    u1 = prepare(op, opts).solve(rhs).x
    factor = target_peak / float(np.abs(u1).max())
    return source.scaled(factor), factor
