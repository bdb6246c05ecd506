"""Spatial excitation profiles per harmonic: regularized point sources and linear arrays."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def eval_dirac(center, zeta: float, x) -> np.ndarray:
    """Cosine-bump point source ``(1 + cos(pi r / (2 zeta))) / (4 zeta)`` for ``r <= 2 zeta``.

    ``x`` has shape ``(..., 2)``; the result has shape ``(...)``. The profile
    peaks at ``1 / (2 zeta)`` and its 2D integral is ``zeta (pi - 4/pi)``,
    not one.
    """
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    d = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)
    r = np.hypot(d[..., 0], d[..., 1])
    return np.where(r <= 2 * zeta, (1.0 + np.cos(np.pi * r / (2 * zeta))) / (4 * zeta), 0.0)


@dataclass(frozen=True)
class RegularizedDirac:
    center: tuple
    zeta: float

    def __post_init__(self):
        if not (math.isfinite(self.zeta) and self.zeta > 0):
            raise ValueError(f"zeta must be positive, got {self.zeta}")

    def __call__(self, x):
        return eval_dirac(self.center, self.zeta, x).astype(complex)

    def support(self):
        """Disks ``(center, radius)`` outside of which the profile vanishes."""
        return [(np.asarray(self.center, dtype=float), 2 * self.zeta)]


@dataclass(frozen=True)
class LinearArray:
    """``n_elements`` point sources spaced horizontally and centred on ``center``."""

    center: tuple
    n_elements: int
    spacing: float
    zeta: float
    phases: tuple | None = None

    def __post_init__(self):
        if self.n_elements < 1:
            raise ValueError("an array needs at least one element")
        if not self.spacing > 0:
            raise ValueError("element spacing must be positive")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if self.phases is not None and len(self.phases) != self.n_elements:
            raise ValueError("one phase per array element is required")

    @property
    def element_centers(self) -> np.ndarray:
        k = np.arange(self.n_elements) - (self.n_elements - 1) / 2
        c = np.asarray(self.center, dtype=float)
        return np.column_stack([c[0] + k * self.spacing, np.full(self.n_elements, c[1])])

    @property
    def aperture(self) -> float:
        return (self.n_elements - 1) * self.spacing

    def __call__(self, x):
        phases = np.zeros(self.n_elements) if self.phases is None else np.asarray(self.phases)
        out = 0j
        for c, ph in zip(self.element_centers, phases):
            out = out + np.exp(1j * ph) * eval_dirac(c, self.zeta, x)
        return np.asarray(out, dtype=complex) * np.ones(np.shape(x)[:-1])

    def support(self):
        return [(c, 2 * self.zeta) for c in self.element_centers]


def eval_array(profile: LinearArray, x):
    return profile(x)


@dataclass(frozen=True)
class SourceComponent:
    m: int
    profile: object
    amplitude: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"source harmonic index must be >= 1, got {self.m}")
        if not math.isfinite(self.amplitude):
            raise ValueError("source amplitude must be finite")


@dataclass(frozen=True)
class SourceSpec:
    components: tuple = field(default_factory=tuple)

    def for_harmonic(self, m):
        return [c for c in self.components if c.m == m]

    def scaled(self, factor: float) -> "SourceSpec":
        return SourceSpec(tuple(SourceComponent(c.m, c.profile, c.amplitude * factor, c.phase)
                                for c in self.components))

    @property
    def harmonics(self):
        return sorted({c.m for c in self.components})


def assemble_source(spec: SourceSpec, m: int):
    """Evaluator for the harmonic-``m`` excitation ``sum amplitude e^{i phase} profile``.

    Returns a callable mapping points ``(..., 2)`` to complex values; with no
    component at ``m`` it returns zeros.
    """
    comps = spec.for_harmonic(m)

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1], dtype=complex)
        for c in comps:
            out += c.amplitude * np.exp(1j * c.phase) * c.profile(x)
        return out

    evaluate.support = [s for c in comps for s in c.profile.support()]
    return evaluate


def elements_touching(mesh, disks):
    """Indices of triangles that may intersect any of the ``(center, radius)`` disks."""
    if not disks:
        return np.zeros(0, dtype=np.int64)
    cen = mesh.centroids
    reach = np.linalg.norm(mesh.vertices[mesh.triangles] - cen[:, None, :], axis=2).max(axis=1)
    hit = np.zeros(mesh.n_triangles, dtype=bool)
    for c, r in disks:
        hit |= np.linalg.norm(cen - c, axis=1) <= r + reach
    return np.flatnonzero(hit)
