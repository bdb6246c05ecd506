"""JSON run configuration: schema, validation and construction of the simulation objects.

Unknown keys anywhere in the document are errors. See ``configs/`` in the
repository for complete examples.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .medium import Material, MediumParams
from .mesh import (DiskShape, HalfPlaneShape, generate_disk_mesh, generate_rect_mesh, read_mesh,
                   tag_region)
from .multiharmonic import IterationConfig
from .solvers import METHODS, PRECONDITIONERS, SolverOptions
from .sources import LinearArray, RegularizedDirac, SourceComponent, SourceSpec


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_point = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_material = {"c": _pos, "b": _nonneg, "BA": _num}
_shape = {"oneOf": [
    _obj({"kind": {"const": "disk"}, "center": _point, "radius": _pos}, ["kind", "center", "radius"]),
    _obj({"kind": {"const": "halfplane"}, "normal": _point, "offset": _num}, ["kind", "normal", "offset"]),
]}
_source_common = {"m": {"type": "integer", "minimum": 1}, "center": _point, "zeta": _pos,
                  "amplitude": _num, "phase": _num}

SCHEMA = _obj({
    "mesh": {"oneOf": [
        _obj({"kind": {"const": "disk"}, "radius": _pos, "center": _point, "h": _pos},
             ["kind", "radius", "h"]),
        _obj({"kind": {"const": "rect"}, "x0": _num, "y0": _num, "x1": _num, "y1": _num,
              "nx": {"type": "integer", "minimum": 1}, "ny": {"type": "integer", "minimum": 1}},
             ["kind", "x0", "y0", "x1", "y1", "nx", "ny"]),
        _obj({"kind": {"const": "file"}, "path": {"type": "string"}}, ["kind", "path"]),
    ]},
    "medium": _obj({
        "rho0": _pos,
        "frequency_hz": _pos,
        "background": _obj(_material, ["c"]),
        "regions": {"type": "array", "items": _obj(dict(_material, shape=_shape, name={"type": "string"}),
                                                   ["shape", "c"])},
        "linear": {"type": "boolean"},
    }, ["rho0", "frequency_hz", "background"]),
    "boundary": {"oneOf": [
        _obj({"mode": {"const": "absorbing"}, "gamma": _pos}, ["mode", "gamma"]),
        _obj({"mode": {"const": "explicit"}, "beta": _nonneg, "gamma": _pos}, ["mode", "beta", "gamma"]),
    ]},
    "excitation": _obj({
        "sources": {"type": "array", "minItems": 1, "items": {"oneOf": [
            _obj(dict(_source_common, kind={"const": "dirac"}), ["kind", "center", "zeta"]),
            _obj(dict(_source_common, kind={"const": "array"},
                      n_elements={"type": "integer", "minimum": 1},
                      spacing=_pos, spacing_wavelengths=_pos,
                      element_phases={"type": "array", "items": _num}),
                 ["kind", "center", "zeta", "n_elements"]),
        ]}},
        "calibrate_peak_pa": _pos,
    }, ["sources"]),
    "harmonics": {"type": "integer", "minimum": 1},
    "iteration": _obj({"max_iterations": {"type": "integer", "minimum": 1}, "tolerance": _pos,
                       "stop_rule": {"enum": ["aggregate", "per_harmonic", "none"]}}),
    "solver": _obj({"method": {"enum": list(METHODS)},
                    "tolerance": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "max_iterations": {"type": "integer", "minimum": 1},
                    "preconditioner": {"enum": list(PRECONDITIONERS)},
                    "shift": _nonneg, "fallback": {"type": "boolean"}}),
    "outputs": _obj({
        "vtk": {"type": "boolean"},
        "line": {"type": "array", "items": _obj({"p0": _point, "p1": _point,
                                                 "n": {"type": "integer", "minimum": 2}, "t": _num},
                                                ["p0", "p1", "n"])},
        "point": {"type": "array", "items": _obj({"x": _point, "periods": {"type": "integer", "minimum": 1},
                                                  "samples_per_period": {"type": "integer", "minimum": 2}},
                                                 ["x"])},
        "spectrum": {"type": "array", "items": _obj({"x": _point,
                                                     "periods": {"type": "integer", "minimum": 1}}, ["x"])},
        "boundary": {"type": "array", "items": _obj({"t": _num, "reference_angle": _num})},
    }),
}, ["mesh", "medium", "boundary", "excitation", "harmonics"])


@dataclass
class RunConfig:
    raw: dict
    medium: MediumParams
    source: SourceSpec
    iteration: IterationConfig
    solver: SolverOptions
    calibrate_peak: float | None
    outputs: dict

    def build_mesh(self, base_dir="."):
        return build_mesh(self.raw, base_dir)


def _path_of(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate_config(raw: dict) -> None:
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        # oneOf failures hide the useful message in the best-matching branch
        best = jsonschema.exceptions.best_match([err]) if err.context else err
        for sub in err.context or ():
            if sub.validator != "const":
                best = sub
                break
        raise ConfigError(f"invalid config at '{_path_of(best) if best.absolute_path else _path_of(err)}': "
                          f"{best.message}")


def _shape(sh):
    if sh["kind"] == "disk":
        return DiskShape(tuple(sh["center"]), sh["radius"])
    return HalfPlaneShape(tuple(sh["normal"]), sh["offset"])


def _speed_at(medium_raw, point):
    """Sound speed of the medium region containing ``point`` (later regions win)."""
    c = medium_raw["background"]["c"]
    for reg in medium_raw.get("regions", []):
        if _shape(reg["shape"]).contains(np.asarray([point], dtype=float))[0]:
            c = reg["c"]
    return c


def _profile(src, medium_raw, frequency):
    center = tuple(src["center"])
    if src["kind"] == "dirac":
        return RegularizedDirac(center, src["zeta"])
    if "spacing" in src and "spacing_wavelengths" in src:
        raise ConfigError("excitation.sources: give 'spacing' or 'spacing_wavelengths', not both")
    if "spacing" in src:
        spacing = src["spacing"]
    elif "spacing_wavelengths" in src:
        spacing = src["spacing_wavelengths"] * _speed_at(medium_raw, center) / frequency
    elif src["n_elements"] == 1:
        spacing = 1.0
    else:
        raise ConfigError("excitation.sources: array needs 'spacing' or 'spacing_wavelengths'")
    phases = src.get("element_phases")
    if phases is not None and len(phases) != src["n_elements"]:
        raise ConfigError("excitation.sources.element_phases: one phase per element is required")
    return LinearArray(center, src["n_elements"], spacing, src["zeta"],
                       None if phases is None else tuple(phases))


def from_dict(raw: dict) -> RunConfig:
    validate_config(raw)
    med = raw["medium"]
    freq = med["frequency_hz"]
    bg = med["background"]
    regions = {0: Material(bg["c"], bg.get("b", 0.0), bg.get("BA", 5.0))}
    for i, reg in enumerate(med.get("regions", []), start=1):
        regions[i] = Material(reg["c"], reg.get("b", 0.0), reg.get("BA", 5.0))
    bnd = raw["boundary"]
    medium = MediumParams(med["rho0"], 2 * math.pi * freq, regions,
                          None if bnd["mode"] == "absorbing" else bnd["beta"], bnd["gamma"],
                          med.get("linear", False))
    comps = []
    for src in raw["excitation"]["sources"]:
        comps.append(SourceComponent(src.get("m", 1), _profile(src, med, freq),
                                     src.get("amplitude", 1.0), src.get("phase", 0.0)))
    M = raw["harmonics"]
    if any(c.m > M for c in comps):
        raise ConfigError("excitation.sources.m: source harmonic exceeds 'harmonics'")
    it = raw.get("iteration", {})
    iteration = IterationConfig(M, it.get("max_iterations", 15), it.get("tolerance", 1e-8),
                                it.get("stop_rule", "aggregate"))
    sv = raw.get("solver", {})
    defaults = SolverOptions()
    solver = SolverOptions(sv.get("method", defaults.method), sv.get("tolerance", defaults.tol),
                           sv.get("max_iterations", defaults.max_iterations),
                           sv.get("preconditioner", defaults.preconditioner),
                           sv.get("fallback", defaults.fallback), sv.get("shift", defaults.shift))
    return RunConfig(raw, medium, SourceSpec(tuple(comps)), iteration, solver,
                     raw["excitation"].get("calibrate_peak_pa"), raw.get("outputs", {}))


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return from_dict(raw)


def build_mesh(raw: dict, base_dir="."):
    """Generate or load the mesh and apply the medium regions in order (later regions win)."""
    spec = raw["mesh"]
    if spec["kind"] == "disk":
        mesh = generate_disk_mesh(spec["radius"], tuple(spec.get("center", (0.0, 0.0))), spec["h"])
    elif spec["kind"] == "rect":
        mesh = generate_rect_mesh(spec["x0"], spec["y0"], spec["x1"], spec["y1"], spec["nx"], spec["ny"])
    else:
        path = Path(spec["path"])
        mesh = read_mesh(path if path.is_absolute() else Path(base_dir) / path)
    mesh = mesh.with_tags([0] * mesh.n_triangles)
    for i, reg in enumerate(raw["medium"].get("regions", []), start=1):
        mesh, _ = tag_region(mesh, _shape(reg["shape"]), i)
    return mesh
