"""Independent oracles: plane-wave manufactured solutions, a DFT check of the coupling
algebra, and mesh-refinement order measurement."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import fem
from .medium import MediumParams
from .mesh import generate_rect_mesh
from .multiharmonic import coupling_bracket
from .solvers import SolverOptions, prepare


@dataclass(frozen=True)
class MmsCase:
    """Plane wave ``exp(i k.x)`` with matching volume load and Robin data for harmonic ``m``."""

    k: tuple
    m: int
    medium: MediumParams

    def exact(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(1j * (x[..., 0] * self.k[0] + x[..., 1] * self.k[1]))

    def load(self, mesh):
        """``f = (|k|^2 - kappa^2 m^2) u`` per element, as a quadrature evaluator."""
        k2 = float(np.dot(self.k, self.k))
        coef = k2 - self.medium.kappa2(mesh, self.m) * self.m ** 2

        def f(xy):
            return coef[:, None] * self.exact(xy)
        return f

    def boundary_data(self, mesh):
        """``g = (i beta m omega + gamma + i k.n) u`` per boundary edge."""
        robin = self.medium.robin_coefficient(mesh, self.m)

        def g(xy, normals):
            kn = normals[..., 0] * self.k[0] + normals[..., 1] * self.k[1]
            return (robin[:, None] + 1j * kn) * self.exact(xy)
        return g


def l2_error(mesh, uh, exact, rule="deg4") -> float:
    """``||u_h - u||_{L2}`` by quadrature against the analytic field."""
    xy, bary, w = fem.quadrature_points(mesh, rule)
    diff = fem.interpolate_at(mesh, uh, bary) - exact(xy)
    return float(np.sqrt(np.sum(np.abs(diff) ** 2 @ w * mesh.areas)))


def mms_solve_and_error(mesh, case: MmsCase, opts: SolverOptions | None = None) -> float:
    op = fem.build_helmholtz(mesh, case.medium, case.m)
    rhs = fem.assemble_load(mesh, case.load(mesh)) + fem.assemble_boundary_load(mesh, case.boundary_data(mesh))
    uh = prepare(op, opts).solve(rhs).x
    return l2_error(mesh, uh, case.exact)


def coupling_oracle(coeffs, m: int, omega: float = 1.0):
    """Bracket value for harmonic ``m`` from direct Fourier analysis of ``p(t)^2``.

    ``p`` is sampled at ``8 M + 1`` points over one period; ``c_m`` with
    ``p^2 = Re{sum_m c_m e^{i m omega t}}`` is extracted by DFT and
    ``2 c_m`` is returned so the value compares directly with the bracket.
    """
    u = np.asarray(coeffs, dtype=complex)
    M = u.shape[0]
    if M < 1:
        raise ValueError("need at least one harmonic")
    if not 1 <= m <= 2 * M:
        raise ValueError(f"harmonic {m} outside 1..{2 * M}")
    nt = 8 * M + 1
    t = 2 * np.pi / omega * np.arange(nt) / nt
    j = np.arange(1, M + 1)
    p = np.real(np.exp(1j * omega * np.outer(t, j)) @ u.reshape(M, -1))
    spec = np.fft.fft(p ** 2, axis=0) / nt
    c_m = 2 * spec[m]
    return (2 * c_m).reshape(u.shape[1:]) if u.ndim > 1 else complex(2 * c_m[0])


def verify_coupling(max_m: int, trials: int, seed=0, tol: float = 1e-10):
    """Compare the analytic bracket with :func:`coupling_oracle` on random coefficient sets.

    ``trials`` sets of standard complex normal coefficients are drawn for every
    ``M = 1 .. max_m``; each harmonic ``m <= M`` must satisfy
    ``|bracket - oracle| <= tol * (1 + |oracle|)``. Returns the failing cases as strings.
    """
    if max_m < 1 or trials < 1:
        raise ValueError("max_m and trials must be >= 1")
    rng = np.random.default_rng(seed)
    failures = []
    for M in range(1, max_m + 1):
        for trial in range(trials):
            u = rng.standard_normal(M) + 1j * rng.standard_normal(M)
            for m in range(1, M + 1):
                a = complex(coupling_bracket(u, m))
                b = coupling_oracle(u, m)
                err = abs(a - b) / (1.0 + abs(b))
                if not err <= tol:
                    failures.append(f"M={M} trial={trial} m={m}: error {err:.3e}")
    return failures


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    error: float
    order: float | None


def convergence_study(hs, observable):
    """Evaluate ``observable(h)`` on a strictly decreasing list of mesh sizes.

    Orders are ``log(e_i / e_{i+1}) / log(h_i / h_{i+1})``; the first row has none.
    """
    hs = [float(h) for h in hs]
    if len(hs) < 2:
        raise ValueError("a convergence study needs at least two mesh sizes")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("mesh sizes must be strictly decreasing")
    errors = [float(observable(h)) for h in hs]
    rows = [ConvergenceRow(hs[0], errors[0], None)]
    for i in range(1, len(hs)):
        order = np.log(errors[i - 1] / errors[i]) / np.log(hs[i - 1] / hs[i])
        rows.append(ConvergenceRow(hs[i], errors[i], float(order)))
    return rows


def write_study_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "l2_error", "observed_order"])
        for r in rows:
            w.writerow([repr(r.h), repr(r.error), "" if r.order is None else repr(r.order)])


def unit_square_mms(levels=4, n0=24, kappa=8.0, angle=0.3, b=0.0, opts=None):
    """MMS study on the unit square, ``n0 * 2**i`` cells per side on level ``i``.

    The medium has ``c = 1`` and ``omega = kappa`` so that ``kappa`` is the
    first-harmonic wavenumber; the plane wave travels at ``angle`` radians.
    Returns the list of :class:`ConvergenceRow`.
    """
    medium = MediumParams.uniform(1.0, b, 5.0, rho0=1.0, omega=kappa, gamma=1.0)
    k_re = np.sqrt(np.real(medium.kappa2(generate_rect_mesh(0, 0, 1, 1, 1, 1), 1)[0]))
    case = MmsCase((k_re * np.cos(angle), k_re * np.sin(angle)), 1, medium)
    opts = opts or SolverOptions(method="direct")
    meshes = {}

    def observable(h):
        return mms_solve_and_error(meshes[h], case, opts)

    hs = []
    for i in range(levels):
        n = n0 * 2 ** i
        mesh = generate_rect_mesh(0, 0, 1, 1, n, n)
        meshes[mesh.h_max] = mesh
        hs.append(mesh.h_max)
    return convergence_study(hs, observable)
