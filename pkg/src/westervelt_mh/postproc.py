"""Time-domain reconstruction and observables: line profiles, point traces, spectra, boundary traces, exports."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mesh import locate_point
from .multiharmonic import HarmonicSet, time_samples


class OutsideMeshError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.times) < 2:
            raise ValueError("a time series needs at least two samples")

    @property
    def sample_rate(self) -> float:
        return 1.0 / float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray
    mag_db: np.ndarray

    def level_at(self, f) -> float:
        return float(self.mag_db[np.argmin(np.abs(self.freqs - f))])


def point_values(mesh, harmonics: HarmonicSet, p) -> np.ndarray:
    """Harmonic coefficients ``(M,)`` interpolated at point ``p``."""
    hit = locate_point(mesh, p)
    if hit is None:
        raise OutsideMeshError(f"point {tuple(p)} lies outside the mesh")
    tri, lam = hit
    return harmonics.coeffs[:, mesh.triangles[tri]] @ lam


def reconstruct(harmonics, times, mesh=None, point=None, omega=None) -> TimeSeries:
    """``p(t) = Re{sum_m u_m e^{i m omega t}}`` at one location.

    ``harmonics`` is either a :class:`HarmonicSet` together with ``mesh`` and
    ``point``, or an array of ``M`` complex coefficients (one location).
    """
    if isinstance(harmonics, HarmonicSet):
        omega = harmonics.omega if omega is None else omega
        if point is None:
            raise ValueError("a sampling point is required for a nodal harmonic set")
        coeffs = point_values(mesh, harmonics, point)
    else:
        coeffs = np.asarray(harmonics, dtype=complex)
        if omega is None:
            raise ValueError("omega is required for raw coefficients")
    times = np.asarray(times, dtype=float)
    if not np.all(np.isfinite(times)):
        raise ValueError("sample times must be finite")
    return TimeSeries(times, time_samples(coeffs, omega, times))


def spectrum_times(omega: float, M: int, periods: int = 16, samples_per_period=None):
    """Default spectral sampling: ``periods`` periods at ``32 M`` samples per period."""
    spp = 32 * M if samples_per_period is None else int(samples_per_period)
    T = 2 * np.pi / omega
    return np.arange(periods * spp) * (T / spp)


def hann(N: int) -> np.ndarray:
    n = np.arange(N)
    return 0.5 * (1.0 - np.cos(2 * np.pi * n / (N - 1)))


def spectrum(series: TimeSeries) -> Spectrum:
    """Hann-windowed one-sided magnitude spectrum in dB relative to its largest bin."""
    x = np.asarray(series.values, dtype=float)
    N = len(x)
    if N < 4:
        raise ValueError("spectrum needs at least 4 samples")
    mag = np.abs(np.fft.rfft(x * hann(N)))
    peak = mag.max()
    if peak == 0:
        raise ValueError("spectrum of an all-zero signal is undefined")
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag / peak)
    return Spectrum(np.fft.rfftfreq(N, d=1.0 / series.sample_rate), db)


def sample_line(mesh, harmonics: HarmonicSet, p0, p1, n: int, t: float = 0.0):
    """Pressure at time ``t`` on ``n`` equispaced points from ``p0`` to ``p1``.

    Rows are ``(s, x, y, p)``; points outside the mesh get ``p = nan``.
    """
    if n < 2:
        raise ValueError("a line needs at least two samples")
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    s = np.linspace(0.0, 1.0, n)
    pts = p0 + s[:, None] * (p1 - p0)
    length = float(np.linalg.norm(p1 - p0))
    phase = np.exp(1j * harmonics.omega * t * np.arange(1, harmonics.M + 1))
    rows = []
    for si, pt in zip(s, pts):
        hit = locate_point(mesh, pt)
        if hit is None:
            val = np.nan
        else:
            tri, lam = hit
            val = float(np.real(phase @ (harmonics.coeffs[:, mesh.triangles[tri]] @ lam)))
        rows.append((si * length, pt[0], pt[1], val))
    return np.array(rows)


def boundary_trace(mesh, harmonics: HarmonicSet, t: float = 0.0, reference_angle: float = 0.0,
                   center=None):
    """Pressure at time ``t`` on the boundary vertices, ordered by angle.

    Angles are measured about ``center`` (the disk centre stored with the
    mesh, else the centroid of the boundary vertices) from
    ``reference_angle`` and wrapped to ``[-pi, pi)``. Rows are ``(theta, p)``.
    """
    verts = mesh.boundary_vertices
    if center is None:
        center = mesh.meta.get("center")
    if center is None:
        center = mesh.vertices[verts].mean(axis=0)
    d = mesh.vertices[verts] - np.asarray(center, dtype=float)
    theta = np.arctan2(d[:, 1], d[:, 0]) - reference_angle
    theta = (theta + np.pi) % (2 * np.pi) - np.pi
    phase = np.exp(1j * harmonics.omega * t * np.arange(1, harmonics.M + 1))
    p = np.real(phase @ harmonics.coeffs[:, verts])
    order = np.argsort(theta, kind="stable")
    return np.column_stack([theta[order], p[order]])


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if isinstance(v, float) and np.isnan(v) else repr(float(v)) for v in row])


def write_field_vtk(mesh, fields: dict, path, title="westervelt-mh fields") -> None:
    """Legacy VTK 2.0 ASCII unstructured grid with point scalars.

    Complex fields are written as ``<name>_re``, ``<name>_im`` and ``<name>_abs``.
    """
    n = mesh.n_vertices
    out = [
        "# vtk DataFile Version 2.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    out += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    nt = mesh.n_triangles
    out.append(f"CELLS {nt} {4 * nt}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    out.append(f"CELL_TYPES {nt}")
    out += ["5"] * nt
    scalars = []
    for name, values in fields.items():
        values = np.asarray(values)
        if values.shape != (n,):
            raise ValueError(f"field {name!r} has shape {values.shape}, expected ({n},)")
        if np.iscomplexobj(values):
            scalars += [(f"{name}_re", values.real), (f"{name}_im", values.imag),
                        (f"{name}_abs", np.abs(values))]
        else:
            scalars.append((name, values))
    if scalars:
        out.append(f"POINT_DATA {n}")
        for name, values in scalars:
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out += [repr(float(v)) for v in values]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


def write_harmonics(harmonics: HarmonicSet, path) -> None:
    """ASCII nodal dump: one row per vertex, columns ``re_1 im_1 ... re_M im_M``."""
    c = harmonics.coeffs
    data = np.empty((c.shape[1], 2 * c.shape[0]))
    data[:, 0::2] = c.real.T
    data[:, 1::2] = c.imag.T
    header = f"omega {float(harmonics.omega)!r}\nharmonics {c.shape[0]}\n" + \
        " ".join(f"re_{m} im_{m}" for m in range(1, c.shape[0] + 1))
    np.savetxt(path, data, header=header, fmt="%.17g")


def read_harmonics(path) -> HarmonicSet:
    omega = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            tok = line[1:].split()
            if len(tok) == 2 and tok[0] == "omega":
                omega = float(tok[1])
    if omega is None:
        raise ValueError(f"{path}: missing 'omega' header")
    data = np.atleast_2d(np.loadtxt(path, comments="#"))
    coeffs = (data[:, 0::2] + 1j * data[:, 1::2]).T
    return HarmonicSet(coeffs, omega)
