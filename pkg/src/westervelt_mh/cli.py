"""Command-line entry point: ``westervelt-mh <mesh|solve|sample|verify|sweep>``.

Exit codes: 0 success, 2 invalid input, 3 fixed-point iteration did not
converge, 4 degeneracy flagged, 5 linear solver failure, 6 verification failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import postproc, verify
from .config import ConfigError, build_mesh, from_dict, load_config
from .mesh import MeshError, generate_disk_mesh, generate_rect_mesh, locate_point, read_mesh, write_mesh
from .multiharmonic import IterationAborted, calibrate_source, iterate
from .solvers import SolverError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
EXIT_DEGENERATE = 4
EXIT_SOLVER = 5
EXIT_VERIFY = 6

log = logging.getLogger("westervelt_mh")


class UsageError(ValueError):
    pass


def _version():
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # not installed
        return "unknown"


# ---------------------------------------------------------------- mesh

def cmd_mesh(args) -> int:
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        cfg = from_dict(raw)
        mesh = build_mesh(cfg.raw, Path(args.config).parent)
    elif args.kind == "disk":
        if args.radius is None or args.h is None:
            raise UsageError("--kind disk needs --radius and --h")
        if not args.radius > 0:
            raise UsageError(f"--radius must be positive, got {args.radius}")
        if not args.h > 0:
            raise UsageError(f"--h must be positive, got {args.h}")
        mesh = generate_disk_mesh(args.radius, tuple(args.center), args.h)
    elif args.kind == "rect":
        if args.nx is None or args.ny is None:
            raise UsageError("--kind rect needs --nx and --ny")
        if args.nx < 1 or args.ny < 1:
            raise UsageError("--nx and --ny must be >= 1")
        x0, y0, x1, y1 = args.bounds
        if not (x1 > x0 and y1 > y0):
            raise UsageError("--bounds must satisfy x1 > x0 and y1 > y0")
        mesh = generate_rect_mesh(x0, y0, x1, y1, args.nx, args.ny)
    else:
        raise UsageError("give --kind disk|rect or --config")
    write_mesh(mesh, args.output)
    stats = mesh.stats()
    print(f"wrote {args.output}")
    for key, val in stats.items():
        print(f"{key}: {val}")
    return EXIT_OK


# ---------------------------------------------------------------- solve

def _check_sample_points(mesh, outputs):
    for key in ("point", "spectrum"):
        for i, req in enumerate(outputs.get(key, [])):
            if locate_point(mesh, req["x"]) is None:
                raise ConfigError(f"invalid config at 'outputs.{key}.{i}.x': point {req['x']} lies outside the mesh")


def _write_outputs(out, mesh, H, cfg, written):
    outputs = cfg.outputs
    omega = H.omega
    if outputs.get("vtk", True):
        path = out / "fields.vtk"
        postproc.write_field_vtk(mesh, {f"u{m}": H[m] for m in range(1, H.M + 1)}, path)
        written.append(path)
    for i, req in enumerate(outputs.get("line", [])):
        rows = postproc.sample_line(mesh, H, req["p0"], req["p1"], req["n"], req.get("t", 0.0))
        path = out / f"line_{i}.csv"
        postproc.write_csv(path, ["s", "x", "y", "p"], rows)
        written.append(path)
    for i, req in enumerate(outputs.get("point", [])):
        times = postproc.spectrum_times(omega, H.M, req.get("periods", 1), req.get("samples_per_period"))
        ts = postproc.reconstruct(H, times, mesh, req["x"])
        path = out / f"point_{i}.csv"
        postproc.write_csv(path, ["t", "p"], np.column_stack([ts.times, ts.values]))
        written.append(path)
    for i, req in enumerate(outputs.get("spectrum", [])):
        times = postproc.spectrum_times(omega, H.M, req.get("periods", 16))
        sp = postproc.spectrum(postproc.reconstruct(H, times, mesh, req["x"]))
        path = out / f"spectrum_{i}.csv"
        postproc.write_csv(path, ["f_hz", "mag_db"], np.column_stack([sp.freqs, sp.mag_db]))
        written.append(path)
    for i, req in enumerate(outputs.get("boundary", [])):
        rows = postproc.boundary_trace(mesh, H, req.get("t", 0.0), req.get("reference_angle", 0.0))
        path = out / f"boundary_{i}.csv"
        postproc.write_csv(path, ["theta_rad", "p"], rows)
        written.append(path)


def run_solve(cfg, out, threads=1, seed=None, base_dir=".", config_path=None):
    """Run one configured simulation into ``out``; returns ``(exit_code, manifest)``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    written = []
    t0 = time.perf_counter()
    mesh = build_mesh(cfg.raw, base_dir)
    _check_sample_points(mesh, cfg.outputs)
    timings["mesh_s"] = time.perf_counter() - t0
    mesh_path = out / "mesh.mhmesh"
    write_mesh(mesh, mesh_path)
    written.append(mesh_path)

    manifest = {
        "tool": "westervelt-mh",
        "version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config_path": None if config_path is None else str(config_path),
        "config": cfg.raw,
        "seed": seed,
        "threads": threads,
        "mesh": mesh.stats(),
        "calibration": None,
    }
    source = cfg.source
    code = EXIT_OK
    H = report = None
    try:
        if cfg.calibrate_peak is not None:
            t = time.perf_counter()
            source, factor = calibrate_source(mesh, cfg.medium, source, cfg.calibrate_peak, cfg.solver)
            timings["calibration_s"] = time.perf_counter() - t
            manifest["calibration"] = {"target_peak_pa": cfg.calibrate_peak, "factor": factor}
        t = time.perf_counter()
        it_cfg = dataclasses.replace(cfg.iteration, threads=max(1, int(threads)))
        H, report = iterate(mesh, cfg.medium, source, it_cfg, cfg.solver)
        timings["iteration_s"] = time.perf_counter() - t
    except IterationAborted as exc:
        H, report = exc.harmonics, exc.report
        code = EXIT_SOLVER
        manifest["error"] = str(exc)
    except SolverError as exc:
        code = EXIT_SOLVER
        manifest["error"] = f"calibration solve failed: {exc}"

    if report is not None:
        path = out / "report.csv"
        report.to_csv(path)
        written.append(path)
        manifest["report"] = report.summary()
        if code == EXIT_OK:
            if report.degenerate:
                code = EXIT_DEGENERATE
            elif not report.converged:
                code = EXIT_NOT_CONVERGED
    if H is not None:
        path = out / "harmonics.txt"
        postproc.write_harmonics(H, path)
        written.append(path)
        if code in (EXIT_OK, EXIT_NOT_CONVERGED) and np.all(np.isfinite(H.coeffs)):
            t = time.perf_counter()
            _write_outputs(out, mesh, H, cfg, written)
            timings["outputs_s"] = time.perf_counter() - t
        manifest["peak_abs"] = [float(np.abs(H[m]).max()) for m in range(1, H.M + 1)]
    timings["total_s"] = time.perf_counter() - t0
    manifest["degeneracy"] = {
        "min_margin": manifest.get("report", {}).get("min_degeneracy_margin"),
        "degenerate": bool(report is not None and report.degenerate),
    }
    manifest["exit_code"] = code
    manifest["timings"] = timings
    manifest_path = out / "manifest.json"
    manifest["outputs"] = [str(p) for p in written] + [str(manifest_path)]
    manifest_path.write_text(json.dumps(manifest, indent=2, default=float) + "\n")
    return code, manifest


def cmd_solve(args) -> int:
    if not args.config:
        raise UsageError("solve needs --config")
    cfg = load_config(args.config)
    code, manifest = run_solve(cfg, args.out, args.threads, args.seed, Path(args.config).parent, args.config)
    rep = manifest.get("report", {})
    print(f"status: {rep.get('status')} after {rep.get('iterations')} sweeps; "
          f"min degeneracy margin {rep.get('min_degeneracy_margin')}")
    if "error" in manifest:
        print(f"error: {manifest['error']}", file=sys.stderr)
    print(f"manifest: {Path(args.out) / 'manifest.json'} (exit {code})")
    return code


# ---------------------------------------------------------------- sample

def cmd_sample(args) -> int:
    run = Path(args.run)
    try:
        mesh = read_mesh(run / "mesh.mhmesh")
        H = postproc.read_harmonics(run / "harmonics.txt")
    except OSError as exc:
        raise UsageError(f"cannot read run artifacts in {run}: {exc}") from None
    if H.n != mesh.n_vertices:
        raise UsageError("harmonics.txt does not match mesh.mhmesh")
    out = Path(args.output) if args.output else run / f"sample_{args.kind}.csv"
    if args.kind == "line":
        if args.p0 is None or args.p1 is None:
            raise UsageError("line sampling needs --p0 and --p1")
        if args.n < 2:
            raise UsageError("--n must be >= 2")
        postproc.write_csv(out, ["s", "x", "y", "p"], postproc.sample_line(mesh, H, args.p0, args.p1, args.n, args.t))
    elif args.kind in ("point", "spectrum"):
        if args.x is None:
            raise UsageError(f"{args.kind} sampling needs --x")
        if args.periods < 1:
            raise UsageError("--periods must be >= 1")
        if args.kind == "point":
            times = postproc.spectrum_times(H.omega, H.M, args.periods, args.samples_per_period)
        else:
            times = postproc.spectrum_times(H.omega, H.M, args.periods)
        try:
            ts = postproc.reconstruct(H, times, mesh, args.x)
        except postproc.OutsideMeshError as exc:
            raise UsageError(str(exc)) from None
        if args.kind == "point":
            postproc.write_csv(out, ["t", "p"], np.column_stack([ts.times, ts.values]))
        else:
            sp = postproc.spectrum(ts)
            postproc.write_csv(out, ["f_hz", "mag_db"], np.column_stack([sp.freqs, sp.mag_db]))
    else:
        postproc.write_csv(out, ["theta_rad", "p"],
                           postproc.boundary_trace(mesh, H, args.t, args.reference_angle))
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    if args.kind == "coupling":
        if args.max_m < 1:
            raise UsageError("--max-m must be >= 1")
        if args.trials < 1:
            raise UsageError("--trials must be >= 1")
        fails = verify.verify_coupling(args.max_m, args.trials, args.seed if args.seed is not None else 0, args.tol)
        total = args.trials * args.max_m * (args.max_m + 1) // 2
        print(f"coupling oracle: {total - len(fails)}/{total} cases within {args.tol:g}")
        for f in fails:
            print(f"FAIL {f}")
        return EXIT_VERIFY if fails else EXIT_OK

    if args.levels < 2:
        raise UsageError("--levels must be >= 2")
    if args.n0 < 1 or not args.kappa > 0:
        raise UsageError("--n0 must be >= 1 and --kappa positive")
    rows = verify.unit_square_mms(args.levels, args.n0, args.kappa)
    for r in rows:
        order = "" if r.order is None else f"{r.order:.4f}"
        print(f"h={r.h:.6g} l2_error={r.error:.6e} observed_order={order}")
    kh = args.kappa * rows[0].h
    print(f"kappa*h on the coarsest level: {kh:.4f}")
    if args.kind == "study" or args.output:
        out = Path(args.output or "study.csv")
        verify.write_study_csv(rows, out)
        print(f"wrote {out}")
    # the finest pairs decide (the coarsest pair can be pre-asymptotic)
    checked = [r for r in rows if r.order is not None][-2:]
    fails = [f"h={r.h:.6g}: order {r.order:.4f} < {args.min_order}" for r in checked
             if not r.order >= args.min_order]
    for f in fails:
        print(f"FAIL {f}")
    return EXIT_VERIFY if fails else EXIT_OK


# ---------------------------------------------------------------- sweep

def _with_mesh_size(raw, h):
    raw = copy.deepcopy(raw)
    mesh = raw["mesh"]
    if mesh["kind"] == "disk":
        mesh["h"] = h
    elif mesh["kind"] == "rect":
        mesh["nx"] = max(1, math.ceil((mesh["x1"] - mesh["x0"]) / h))
        mesh["ny"] = max(1, math.ceil((mesh["y1"] - mesh["y0"]) / h))
    else:
        raise UsageError("sweep needs a generated mesh (kind disk or rect), not a mesh file")
    return raw


def cmd_sweep(args) -> int:
    if not args.config:
        raise UsageError("sweep needs --config")
    if not args.h:
        raise UsageError("sweep needs a non-empty --h list")
    if any(not h > 0 for h in args.h):
        raise UsageError("mesh sizes must be positive")
    base = json.loads(Path(args.config).read_text())
    from_dict(base)  # validate before running anything
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, runs, worst = [], [], EXIT_OK
    for i, h in enumerate(args.h):
        cfg = from_dict(_with_mesh_size(base, h))
        run_dir = out / f"run_{i}"
        code, manifest = run_solve(cfg, run_dir, args.threads, args.seed, Path(args.config).parent, args.config)
        runs.append({"h": h, "dir": str(run_dir), "exit_code": code,
                     "h_max": manifest["mesh"]["h_max"], "manifest": str(run_dir / "manifest.json")})
        print(f"h={h:g}: exit {code}")
        if code != EXIT_OK and worst == EXIT_OK:
            worst = code
        report_csv = run_dir / "report.csv"
        if report_csv.exists():
            with open(report_csv, newline="", encoding="utf-8") as fh:
                for r in csv.DictReader(fh):
                    if r["m"]:
                        rows.append((h, int(r["iter"]), int(r["m"]), r["l2_diff"]))
    sweep_csv = out / "sweep.csv"
    with open(sweep_csv, "w", encoding="utf-8") as fh:
        fh.write("h,iter,m,l2_diff\n")
        for h, k, m, d in rows:
            fh.write(f"{h!r},{k},{m},{d}\n")
    manifest_path = out / "sweep_manifest.json"
    manifest_path.write_text(json.dumps({"config_path": str(args.config), "runs": runs,
                                         "outputs": [str(sweep_csv), str(manifest_path)],
                                         "exit_code": worst}, indent=2) + "\n")
    print(f"wrote {sweep_csv}")
    return worst


# ---------------------------------------------------------------- main

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", default="run", help="output directory (default: run)")
    common.add_argument("--seed", type=int, default=None, help="random seed (recorded; used by verify coupling)")
    common.add_argument("--threads", type=int, default=1, help="concurrent harmonic solves per sweep")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-sweep progress")

    p = argparse.ArgumentParser(prog="westervelt-mh",
                                description="Multiharmonic nonlinear ultrasound simulation (2D P1 FEM).")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", parents=[common], help="generate and write a mesh")
    m.add_argument("--kind", choices=["disk", "rect"])
    m.add_argument("--radius", type=float)
    m.add_argument("--center", type=float, nargs=2, default=(0.0, 0.0))
    m.add_argument("--h", type=float, help="target edge length (disk)")
    m.add_argument("--bounds", type=float, nargs=4, default=(0.0, 0.0, 1.0, 1.0), metavar=("X0", "Y0", "X1", "Y1"))
    m.add_argument("--nx", type=int)
    m.add_argument("--ny", type=int)
    m.add_argument("-o", "--output", default="mesh.mhmesh")
    m.set_defaults(func=cmd_mesh)

    s = sub.add_parser("solve", parents=[common], help="run a configured simulation")
    s.set_defaults(func=cmd_solve)

    sa = sub.add_parser("sample", parents=[common], help="sample a finished run")
    sa.add_argument("--run", required=True, help="run directory written by solve")
    sa.add_argument("--kind", required=True, choices=["line", "point", "boundary", "spectrum"])
    sa.add_argument("--p0", type=float, nargs=2)
    sa.add_argument("--p1", type=float, nargs=2)
    sa.add_argument("--n", type=int, default=100)
    sa.add_argument("--t", type=float, default=0.0, help="time instant in seconds")
    sa.add_argument("--x", type=float, nargs=2, help="sampling point")
    sa.add_argument("--periods", type=int, default=16)
    sa.add_argument("--samples-per-period", type=int, default=None)
    sa.add_argument("--reference-angle", type=float, default=0.0)
    sa.add_argument("-o", "--output")
    sa.set_defaults(func=cmd_sample)

    v = sub.add_parser("verify", parents=[common], help="run an oracle check")
    v.add_argument("kind", choices=["coupling", "mms", "study"])
    v.add_argument("--max-m", type=int, default=6)
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--tol", type=float, default=1e-10)
    v.add_argument("--levels", type=int, default=4)
    v.add_argument("--n0", type=int, default=24, help="cells per side on the coarsest level")
    v.add_argument("--kappa", type=float, default=8.0)
    v.add_argument("--min-order", type=float, default=1.8)
    v.add_argument("-o", "--output")
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("sweep", parents=[common], help="repeat a solve over mesh sizes")
    w.add_argument("--h", type=float, nargs="*", default=[])
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:  # parameter validation in the library
        print(f"error: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
