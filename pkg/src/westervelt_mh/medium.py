"""Physical coefficients of the propagation medium, resolved per element and per boundary edge."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def eta_from_BA(BA: float, rho0: float, c: float) -> float:
    """Nonlinearity coefficient ``(1 + B/(2A)) / (rho0 c^2)`` in 1/Pa."""
    if rho0 <= 0 or c <= 0:
        raise ValueError("rho0 and c must be positive")
    return (1.0 + 0.5 * BA) / (rho0 * c * c)


@dataclass(frozen=True)
class Material:
    c: float          # sound speed, m/s
    b: float = 0.0    # sound diffusivity, m^2/s
    BA: float = 5.0   # B/A, dimensionless

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValueError(f"sound speed must be positive, got {self.c}")
        if not (math.isfinite(self.b) and self.b >= 0):
            raise ValueError(f"diffusivity must be non-negative, got {self.b}")
        if not math.isfinite(self.BA):
            raise ValueError("B/A must be finite")


@dataclass(frozen=True)
class MediumParams:
    """Medium description shared by every harmonic.

    ``regions`` maps a triangle region tag to its :class:`Material`. With
    ``beta=None`` the boundary is absorbing (``beta = 1/c`` of the adjacent
    element); otherwise ``beta`` is used verbatim. ``linear=True`` forces the
    nonlinearity coefficient to zero everywhere.
    """

    rho0: float
    omega: float
    regions: dict = field(default_factory=dict)
    beta: float | None = None
    gamma: float = 1.0
    linear: bool = False

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not self.regions:
            raise ValueError("at least one region material is required")

    @classmethod
    def uniform(cls, c, b=0.0, BA=5.0, *, rho0=1000.0, omega, beta=None, gamma=1.0, linear=False):
        return cls(rho0, omega, {0: Material(c, b, BA)}, beta, gamma, linear)

    @property
    def frequency(self) -> float:
        return self.omega / (2 * np.pi)

    def _lookup(self, tags, attr):
        tags = np.asarray(tags)
        out = np.empty(len(tags))
        for tag in np.unique(tags):
            try:
                mat = self.regions[int(tag)]
            except KeyError:
                raise KeyError(f"no material for region tag {int(tag)}") from None
            out[tags == tag] = getattr(mat, attr)
        return out

    def element_c(self, mesh):
        return self._lookup(mesh.tags, "c")

    def element_b(self, mesh):
        return self._lookup(mesh.tags, "b")

    def element_eta(self, mesh):
        if self.linear:
            return np.zeros(mesh.n_triangles)
        BA = self._lookup(mesh.tags, "BA")
        c = self.element_c(mesh)
        return (1.0 + 0.5 * BA) / (self.rho0 * c * c)

    def kappa2(self, mesh, m: int):
        """Per-element ``omega^2 / (c^2 + i m omega b)``."""
        c = self.element_c(mesh)
        b = self.element_b(mesh)
        return self.omega ** 2 / (c * c + 1j * m * self.omega * b)

    def boundary_beta(self, mesh):
        if self.beta is None:
            return 1.0 / self.element_c(mesh)[mesh.boundary_owner]
        return np.full(len(mesh.boundary), float(self.beta))

    def robin_coefficient(self, mesh, m: int):
        """Per-edge ``i beta m omega + gamma``."""
        return 1j * self.boundary_beta(mesh) * m * self.omega + self.gamma

    def with_linear(self, linear=True) -> "MediumParams":
        return MediumParams(self.rho0, self.omega, dict(self.regions), self.beta, self.gamma, linear)
