"""Periodic nonlinear ultrasound in 2D: multiharmonic Westervelt solver on P1 finite elements."""
from .medium import Material, MediumParams, eta_from_BA
from .mesh import Mesh, generate_disk_mesh, generate_rect_mesh, read_mesh, write_mesh
from .multiharmonic import (HarmonicSet, IterationConfig, IterationReport, calibrate_source,
                            coupling_term, degeneracy_margin, iterate)
from .solvers import SolverOptions
from .sources import LinearArray, RegularizedDirac, SourceComponent, SourceSpec

__all__ = [
    "Material", "MediumParams", "eta_from_BA", "Mesh", "generate_disk_mesh", "generate_rect_mesh",
    "read_mesh", "write_mesh", "HarmonicSet", "IterationConfig", "IterationReport", "calibrate_source",
    "coupling_term", "degeneracy_margin", "iterate", "SolverOptions", "LinearArray", "RegularizedDirac",
    "SourceComponent", "SourceSpec",
]
