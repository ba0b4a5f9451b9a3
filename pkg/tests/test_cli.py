import json
from pathlib import Path

import numpy as np
import pytest

from insulshape import records
from insulshape.cli import main, read_config
from insulshape.errors import ParseError
from insulshape.geometry import metrics, parse_mesh
from insulshape.grid import dumbbell, format_grid, rasterize

DISK_STAR = "starshape 1\ncenter 0 0\na0 1\n"


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    Path("disk.star").write_text(DISK_STAR)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def load(path):
    return json.loads(Path(path).read_text())


class TestMesh:
    def test_writes_mesh_and_manifest(self, work):
        assert run("mesh", "disk.star", "--h", 0.05, "--out", "disk.mesh") == 0
        assert Path("disk.mesh").read_text().startswith("insulmesh 1")
        man = load("disk.mesh.manifest.json")
        assert man["command"] == "mesh" and man["config"]["h"] == 0.05
        assert man["input_hashes"]["disk.star"] == records.file_hash("disk.star")
        assert man["outputs"] == ["disk.mesh"]
        assert "mesh" in man["timings"]

    def test_bad_header(self, work, capsys):
        Path("bad.star").write_text("shape 1\n")
        assert run("mesh", "bad.star", "--out", "x.mesh") == 2
        assert "line 1" in capsys.readouterr().err

    def test_h_too_large(self, work):
        assert run("mesh", "disk.star", "--h", 0.5, "--out", "x.mesh") == 3

    def test_unknown_flag(self, work):
        assert run("mesh", "disk.star", "--bogus", "--out", "x.mesh") == 2


class TestSolve:
    def test_disk_linear(self, work):
        run("mesh", "disk.star", "--h", 0.05, "--out", "disk.mesh")
        assert run("solve", "disk.mesh", "--m", 1, "--f", "const:1", "--path", "linear", "--out", "sol.json") == 0
        sol = load("sol.json")
        dm = metrics(parse_mesh(Path("disk.mesh").read_text()))
        assert sol["boundary_integral"] == pytest.approx(dm.area / dm.perimeter, rel=1e-8)
        assert abs(sol["boundary_integral"] - 0.5) < 1e-3
        assert Path("sol.energy.json").is_file()

    def test_annulus_linear_refuses(self, work, capsys):
        run("mesh", "annulus:1,2", "--h", 0.1, "--out", "ann.mesh")
        assert run("solve", "ann.mesh", "--m", 0.5, "--path", "linear", "--out", "a.json") == 4
        assert "--path eps" in capsys.readouterr().err

    def test_annulus_eps(self, work):
        run("mesh", "annulus:1,2", "--h", 0.1, "--out", "ann.mesh")
        assert run("solve", "ann.mesh", "--m", 0.5, "--path", "eps", "--out", "a.json") == 0
        assert load("a.json")["trace_min"] >= -1e-8

    def test_nonpositive_mass(self, work):
        run("mesh", "disk.star", "--h", 0.1, "--out", "disk.mesh")
        assert run("solve", "disk.mesh", "--m", 0, "--out", "s.json") == 2

    def test_energy_command(self, work):
        run("mesh", "disk.star", "--h", 0.05, "--out", "disk.mesh")
        run("solve", "disk.mesh", "--out", "sol.json")
        assert run("energy", "sol.json", "--out", "e.json", "--h-csv", "h.csv") == 0
        assert load("e.json")["total"] == pytest.approx(load("sol.energy.json")["total"], abs=0)
        lines = Path("h.csv").read_text().splitlines()
        assert lines[0] == "arclength,h"
        h = np.array([float(l.split(",")[1]) for l in lines[1:]])
        assert np.allclose(h, 1 / (2 * np.pi), rtol=1e-2)

    def test_energy_detects_changed_mesh(self, work):
        run("mesh", "disk.star", "--h", 0.1, "--out", "disk.mesh")
        run("solve", "disk.mesh", "--out", "sol.json")
        Path("disk.mesh").write_text(Path("disk.mesh").read_text() + "\n")
        assert run("energy", "sol.json", "--out", "e.json") == 2


class TestOtherCommands:
    def test_stability_table(self, work):
        assert run("stability", "--R", 1, "--m", 1, "--modes", 16, "--out", "st.json") == 0
        rows = load("st.json")["modes"]
        assert rows[0]["Q_closed"] == 0.0
        assert rows[1]["Q_closed"] == pytest.approx(0.767699, abs=1e-6)
        assert load("st.json")["all_nonnegative"]

    @pytest.mark.parametrize("modes", [0, 65])
    def test_stability_bad_modes(self, work, modes):
        assert run("stability", "--modes", modes) == 2

    def test_flow_disk(self, work):
        assert run("flow", "disk.star", "--out-dir", "fl") == 0
        rows = Path("fl/flow.csv").read_text().splitlines()
        assert len(rows) == 2
        assert Path("fl/final.star").is_file() and Path("fl/manifest.json").is_file()

    def test_flow_bad_volume(self, work):
        assert run("flow", "disk.star", "--V0", -1, "--out-dir", "fl") == 2

    def test_gradient_fd_check(self, work):
        Path("e.star").write_text("starshape 1\ncenter 0 0\na0 1\nmode 2 0.1 0\n")
        assert run("gradient", "e.star", "--h", 0.04, "--fd-check", "--out", "g.json") == 0
        assert load("g.json")["fd_passed"]
        assert run("gradient", "e.star", "--h", 0.04, "--fd-check", "--rtol", 1e-9, "--out", "g2.json") == 7

    def test_gradient_bad_zeta(self, work):
        assert run("gradient", "disk.star", "--zeta", "tan2", "--out", "g.json") == 2


class TestDiagnose:
    def test_stekloff(self, work):
        assert run("diagnose", "disk.star", "--check", "stekloff", "--h", 0.03, "--out", "s.json") == 0
        assert load("s.json")["eigenvalue"] == pytest.approx(1.0, rel=1e-2)

    def test_porosity(self, work):
        assert run("diagnose", "disk.star", "--check", "porosity", "--out", "p.json") == 0
        assert load("p.json")["delta_fit"] == pytest.approx(1.0, abs=0.05)

    def test_dumbbell_grid(self, work):
        Path("db.grid").write_text(format_grid(rasterize(dumbbell(0.025), 1 / 128)))
        assert run("diagnose", "db.grid", "--check", "m-uniform", "--M", 5, "--pairs", 60, "--out", "m.json") == 0
        rep = load("m.json")
        assert rep["pass_fraction"] < 0.99
        assert rep["worst_pair"]["x1"][0] * rep["worst_pair"]["x2"][0] < 0

    def test_frac_perimeter_seeded(self, work):
        args = ("diagnose", "disk:1", "--check", "frac-perimeter", "--samples", 20000, "--hg", 1 / 64)
        run("--seed", 5, *args, "--out", "a.json")
        run("--seed", 5, *args, "--out", "b.json")
        run("--seed", 6, *args, "--out", "c.json")
        assert load("a.json")["estimate"] == load("b.json")["estimate"] != load("c.json")["estimate"]

    def test_module_error_maps_to_7(self, work):
        occ = np.zeros((64, 64), dtype=bool)
        occ[4:20, 4:20] = occ[40:60, 40:60] = True
        Path("two.grid").write_text(format_grid(rasterize(occ, 1 / 64)))
        assert run("diagnose", "two.grid", "--check", "m-uniform") == 7

    def test_bad_flags(self, work):
        assert run("diagnose", "disk:1", "--check", "m-uniform", "--M", 0.5) == 2
        assert run("diagnose", "disk:1", "--check", "frac-perimeter", "--s", 1.5) == 2
        assert run("diagnose", "disk:1", "--check", "nope") == 2


class TestGlobalFlags:
    def test_json_stdout_only(self, work, capsys):
        run("mesh", "disk.star", "--h", 0.1, "--out", "disk.mesh")
        capsys.readouterr()
        assert run("--json", "solve", "disk.mesh", "--out", "s.json") == 0
        out = capsys.readouterr().out
        assert json.loads(out)["path"] == "linear"

    def test_config_precedence(self, work):
        Path("run.cfg").write_text("# test config\nh = 0.1\nmethod = rings\n")
        run("--config", "run.cfg", "mesh", "disk.star", "--h", 0.08, "--out", "a.mesh")
        cfg = load("a.mesh.manifest.json")["config"]
        assert cfg["h"] == 0.08 and cfg["method"] == "rings"
        run("--config", "run.cfg", "mesh", "disk.star", "--out", "b.mesh")
        assert load("b.mesh.manifest.json")["config"]["h"] == 0.1
        run("mesh", "disk.star", "--out", "c.mesh")
        assert load("c.mesh.manifest.json")["config"]["h"] == 0.02

    def test_bad_config(self, work):
        Path("bad.cfg").write_text("h 0.1\n")
        with pytest.raises(ParseError):
            read_config("bad.cfg")
        assert run("--config", "bad.cfg", "mesh", "disk.star", "--out", "a.mesh") == 2

    def test_seed_and_threads_recorded(self, work):
        run("--seed", 42, "--threads", 4, "mesh", "disk.star", "--h", 0.1, "--out", "a.mesh")
        man = load("a.mesh.manifest.json")
        assert man["seed"] == 42 and man["config"]["threads"] == 4


class TestReplay:
    def test_solve_replay_bit_identical(self, work):
        run("mesh", "disk.star", "--h", 0.05, "--out", "disk.mesh")
        run("solve", "disk.mesh", "--out", "sol.json")
        before = records.file_hash("sol.json")
        assert run("replay", "sol.json.manifest.json") == 0
        assert records.file_hash("sol.json") == before

    def test_seeded_diagnose_replay(self, work):
        run("--seed", 9, "diagnose", "disk:1", "--check", "frac-perimeter", "--samples", 20000, "--hg", 1 / 64, "--out", "fp.json")
        assert run("replay", "fp.json.manifest.json") == 0

    def test_changed_input_detected(self, work):
        run("mesh", "disk.star", "--h", 0.1, "--out", "disk.mesh")
        Path("disk.star").write_text(DISK_STAR.replace("a0 1", "a0 1.1"))
        assert run("replay", "disk.mesh.manifest.json") == 7

    def test_tampered_output_detected(self, work):
        run("mesh", "disk.star", "--h", 0.1, "--out", "disk.mesh")
        man = json.loads(Path("disk.mesh.manifest.json").read_text())
        man["output_hashes"]["disk.mesh"] = "0" * 64
        Path("disk.mesh.manifest.json").write_text(json.dumps(man))
        assert run("replay", "disk.mesh.manifest.json") == 7
