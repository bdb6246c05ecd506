import copy
import csv
import json

import numpy as np
import pytest

from westervelt_mh.cli import main
from westervelt_mh.config import ConfigError, from_dict, load_config
from westervelt_mh.mesh import read_mesh

SMALL = {
    "mesh": {"kind": "disk", "radius": 0.05, "h": 0.004},
    "medium": {"rho0": 1000.0, "frequency_hz": 100000.0, "background": {"c": 1480.0, "b": 1e-9, "BA": 5.0}},
    "boundary": {"mode": "absorbing", "gamma": 1.0},
    "excitation": {"sources": [{"kind": "dirac", "m": 1, "center": [0.0, 0.0], "zeta": 0.0005}],
                   "calibrate_peak_pa": 500000.0},
    "harmonics": 3,
    "iteration": {"max_iterations": 6, "tolerance": 1e-8, "stop_rule": "none"},
    "solver": {"method": "direct"},
    "outputs": {
        "vtk": True,
        "line": [{"p0": [0.0, 0.0], "p1": [0.0, -0.045], "n": 21}],
        "point": [{"x": [0.0, -0.02], "periods": 2}],
        "spectrum": [{"x": [0.0, -0.02], "periods": 8}],
        "boundary": [{"t": 0.0}],
    },
}


def write_cfg(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestMesh:
    def test_disk(self, tmp_path, capsys):
        out = tmp_path / "d.mhmesh"
        assert main(["mesh", "--kind", "disk", "--radius", "0.1", "--h", "0.02", "-o", str(out)]) == 0
        mesh = read_mesh(out)
        assert mesh.stats()["h_max"] <= 1.5 * 0.02
        assert "vertices:" in capsys.readouterr().out

    def test_rect(self, tmp_path):
        out = tmp_path / "r.mhmesh"
        assert main(["mesh", "--kind", "rect", "--nx", "4", "--ny", "4", "-o", str(out)]) == 0
        assert read_mesh(out).n_triangles == 32

    @pytest.mark.parametrize("argv, word", [
        (["--kind", "disk", "--radius", "-1", "--h", "0.1"], "--radius"),
        (["--kind", "disk", "--radius", "1", "--h", "0"], "--h"),
        (["--kind", "rect", "--nx", "0", "--ny", "2"], "--nx"),
        (["--kind", "rect", "--nx", "2", "--ny", "2", "--bounds", "1", "0", "0", "1"], "--bounds"),
        ([], "--kind"),
    ])
    def test_invalid(self, tmp_path, capsys, argv, word):
        assert main(["mesh", *argv, "-o", str(tmp_path / "x.mhmesh")]) == 2
        assert word in capsys.readouterr().err

    def test_from_config(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL)
        assert main(["mesh", "--config", cfg, "-o", str(tmp_path / "c.mhmesh")]) == 0


class TestConfig:
    def test_unknown_key_named(self, tmp_path, capsys):
        raw = copy.deepcopy(SMALL)
        raw["medium"]["colour"] = "blue"
        assert main(["solve", "--config", write_cfg(tmp_path, raw), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "medium" in err and "colour" in err

    @pytest.mark.parametrize("path, value", [
        (("harmonics",), 0),
        (("medium", "background", "c"), -1.0),
        (("iteration", "stop_rule"), "sometimes"),
        (("solver", "method"), "magic"),
    ])
    def test_rejects_bad_values(self, path, value):
        raw = copy.deepcopy(SMALL)
        node = raw
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
        with pytest.raises(ConfigError, match=path[-1]):
            from_dict(raw)

    def test_source_above_m(self):
        raw = copy.deepcopy(SMALL)
        raw["excitation"]["sources"][0]["m"] = 4
        with pytest.raises(ConfigError):
            from_dict(raw)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_shipped_configs_load(self):
        from pathlib import Path
        root = Path(__file__).resolve().parents[1] / "configs"
        for p in sorted(root.glob("*.json")):
            load_config(p)

    def test_point_outside_mesh(self, tmp_path):
        raw = copy.deepcopy(SMALL)
        raw["outputs"]["point"][0]["x"] = [1.0, 1.0]
        assert main(["solve", "--config", write_cfg(tmp_path, raw), "--out", str(tmp_path / "o")]) == 2


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    d = tmp_path_factory.mktemp("solve")
    cfg = write_cfg(d, SMALL)
    code = main(["solve", "--config", cfg, "--out", str(d / "run"), "--seed", "3"])
    return d, cfg, code


class TestSolve:
    def test_exit_and_manifest(self, solved):
        d, _, code = solved
        assert code == 0
        man = json.loads((d / "run" / "manifest.json").read_text())
        assert man["exit_code"] == 0 and man["seed"] == 3
        names = {p.split("/")[-1] for p in man["outputs"]}
        assert names == {"mesh.mhmesh", "report.csv", "harmonics.txt", "fields.vtk", "line_0.csv", "point_0.csv",
                         "spectrum_0.csv", "boundary_0.csv", "manifest.json"}
        for p in man["outputs"]:
            assert (d / "run" / p.split("/")[-1]).exists()
        assert man["calibration"]["target_peak_pa"] == 5e5
        # calibration is linear; the nonlinear feedback on the fundamental is small but not zero
        assert man["peak_abs"][0] == pytest.approx(5e5, rel=1e-3)
        assert 0 < man["degeneracy"]["min_margin"] <= 1
        assert man["config"] == SMALL

    def test_file_contents(self, solved):
        d, _, _ = solved
        run = d / "run"
        line = read_rows(run / "line_0.csv")
        assert line[0] == ["s", "x", "y", "p"] and len(line) == 22
        assert read_rows(run / "point_0.csv")[0] == ["t", "p"]
        assert len(read_rows(run / "point_0.csv")) == 1 + 2 * 32 * 3
        spec = np.array(read_rows(run / "spectrum_0.csv")[1:], dtype=float)
        assert spec[:, 1].max() == 0
        assert read_rows(run / "boundary_0.csv")[0] == ["theta_rad", "p"]
        report = read_rows(run / "report.csv")
        assert report[0][:4] == ["iter", "m", "l2_diff", "rel_l2_diff"]

    def test_deterministic(self, solved, tmp_path):
        d, cfg, _ = solved
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / "again"), "--seed", "3"]) == 0
        for name in ("line_0.csv", "point_0.csv", "spectrum_0.csv", "boundary_0.csv", "harmonics.txt", "report.csv"):
            assert (tmp_path / "again" / name).read_bytes() == (d / "run" / name).read_bytes(), name

    def test_threads_do_not_change_results(self, solved, tmp_path):
        d, cfg, _ = solved
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / "t"), "--threads", "3"]) == 0
        assert (tmp_path / "t" / "harmonics.txt").read_bytes() == (d / "run" / "harmonics.txt").read_bytes()

    @pytest.mark.parametrize("kind, extra, header", [
        ("line", ["--p0", "0", "0", "--p1", "0.01", "0", "--n", "2"], ["s", "x", "y", "p"]),
        ("point", ["--x", "0", "-0.01", "--periods", "1"], ["t", "p"]),
        ("spectrum", ["--x", "0", "-0.01"], ["f_hz", "mag_db"]),
        ("boundary", ["--reference-angle", "1.0"], ["theta_rad", "p"]),
    ])
    def test_sample(self, solved, tmp_path, kind, extra, header):
        d, _, _ = solved
        out = tmp_path / f"{kind}.csv"
        assert main(["sample", "--run", str(d / "run"), "--kind", kind, *extra, "-o", str(out)]) == 0
        rows = read_rows(out)
        assert rows[0] == header
        if kind == "line":
            assert len(rows) == 3

    def test_sample_errors(self, solved, tmp_path):
        d, _, _ = solved
        run = str(d / "run")
        assert main(["sample", "--run", run, "--kind", "line", "--p0", "0", "0"]) == 2
        assert main(["sample", "--run", run, "--kind", "point", "--x", "5", "5"]) == 2
        assert main(["sample", "--run", str(tmp_path / "missing"), "--kind", "boundary"]) == 2

    def test_not_converged(self, tmp_path):
        raw = copy.deepcopy(SMALL)
        raw["iteration"] = {"max_iterations": 2, "tolerance": 1e-14, "stop_rule": "aggregate"}
        out = tmp_path / "o"
        assert main(["solve", "--config", write_cfg(tmp_path, raw), "--out", str(out)]) == 3
        assert (out / "line_0.csv").exists()

    def test_degenerate(self, tmp_path):
        raw = copy.deepcopy(SMALL)
        raw["excitation"]["calibrate_peak_pa"] = 1e9
        out = tmp_path / "o"
        assert main(["solve", "--config", write_cfg(tmp_path, raw), "--out", str(out)]) == 4
        man = json.loads((out / "manifest.json").read_text())
        assert man["degeneracy"]["degenerate"] and man["degeneracy"]["min_margin"] <= 0
        assert not (out / "line_0.csv").exists()

    def test_linear_config_converges_fast(self, tmp_path):
        raw = copy.deepcopy(SMALL)
        raw["medium"]["linear"] = True
        raw["harmonics"] = 1
        raw["iteration"] = {"max_iterations": 5, "tolerance": 1e-8, "stop_rule": "aggregate"}
        out = tmp_path / "o"
        assert main(["solve", "--config", write_cfg(tmp_path, raw), "--out", str(out)]) == 0
        assert json.loads((out / "manifest.json").read_text())["report"]["iterations"] <= 2


class TestVerify:
    def test_coupling(self, capsys):
        assert main(["verify", "coupling", "--max-m", "6", "--trials", "10", "--seed", "7"]) == 0
        assert "210/210" in capsys.readouterr().out
        assert main(["verify", "coupling", "--max-m", "0"]) == 2

    def test_mms_and_study(self, tmp_path):
        assert main(["verify", "mms", "--levels", "3"]) == 0
        out = tmp_path / "study.csv"
        assert main(["verify", "study", "--levels", "3", "-o", str(out)]) == 0
        assert read_rows(out)[0] == ["h", "l2_error", "observed_order"]
        assert main(["verify", "mms", "--levels", "1"]) == 2

    def test_mms_failure_exit(self):
        # an impossible order threshold must be reported as a verification failure
        assert main(["verify", "mms", "--levels", "3", "--min-order", "5"]) == 6


class TestSweep:
    def test_sweep(self, tmp_path):
        raw = copy.deepcopy(SMALL)
        raw["medium"]["linear"] = True
        raw["outputs"] = {"vtk": False}
        cfg = write_cfg(tmp_path, raw)
        out = tmp_path / "sw"
        assert main(["sweep", "--config", cfg, "--out", str(out), "--h", "0.008", "0.006"]) == 0
        rows = read_rows(out / "sweep.csv")
        assert rows[0] == ["h", "iter", "m", "l2_diff"]
        body = [r for r in rows[1:]]
        assert {r[0] for r in body} == {"0.008", "0.006"}
        # linear runs: from the second sweep on nothing changes
        assert all(float(r[3]) <= 1e-9 * 5e5 for r in body if int(r[1]) >= 2)
        man = json.loads((out / "sweep_manifest.json").read_text())
        assert [r["exit_code"] for r in man["runs"]] == [0, 0]
        assert (out / "run_1" / "manifest.json").exists()

    def test_empty_h(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL)
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "sw")]) == 2
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "sw"), "--h", "-1"]) == 2


def test_no_command(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err
