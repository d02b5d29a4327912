import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from hvboussinesq.cli import EXIT_CONFIG, EXIT_OK, EXIT_STUDY, main
from hvboussinesq.config import parse_config, scenario
from hvboussinesq.integrator import FieldState, H0Error, setup
from hvboussinesq.io import RunManifest, export_fields, read_fields_csv, run_scenario


@pytest.fixture(scope="module")
def small():
    _, spaces, _ = setup(parse_config({"mesh": {"nx": 3, "ny": 2}}))
    rng = np.random.default_rng(5)
    nb = spaces.boundary.size
    st = FieldState(0.25, rng.standard_normal(spaces.n_u), rng.standard_normal(spaces.n_p),
                    rng.standard_normal(spaces.n_theta), np.zeros(nb), np.zeros(nb))
    return spaces, st


def test_csv_round_trip_is_bit_exact(small, tmp_path):
    spaces, st = small
    path = export_fields(st, spaces, tmp_path / "f.csv")
    table = read_fields_csv(path)
    nv = spaces.mesh.n_vertices
    assert table.shape == (nv, 6)
    assert np.array_equal(table[:, :2], spaces.mesh.vertices)
    assert np.array_equal(table[:, 2:4], spaces.velocity_full(st.u)[:nv])
    assert np.array_equal(table[:, 4], st.p)
    assert np.array_equal(table[:, 5], spaces.temperature_full(st.theta))


def test_vtu_structure(small, tmp_path):
    spaces, st = small
    root = ET.parse(export_fields(st, spaces, tmp_path / "f.vtu")).getroot()
    piece = root.find("UnstructuredGrid/Piece")
    assert int(piece.get("NumberOfPoints")) == spaces.mesh.n_vertices == 12
    assert int(piece.get("NumberOfCells")) == spaces.mesh.n_triangles == 12
    theta = [float(v) for v in piece.find("PointData/DataArray[@Name='theta']").text.split()]
    assert np.array_equal(theta, spaces.temperature_full(st.theta))


def test_zero_state_exports_zeros(small, tmp_path):
    spaces, st = small
    zero = FieldState(0.0, 0 * st.u, 0 * st.p, 0 * st.theta, st.xi, st.xi1)
    table = read_fields_csv(export_fields(zero, spaces, tmp_path / "z.csv"))
    assert not np.any(table[:, 2:])


def test_unknown_format_and_unwritable_path(small, tmp_path):
    spaces, st = small
    with pytest.raises(ValueError):
        export_fields(st, spaces, tmp_path / "f.h5")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot write"):
        export_fields(st, spaces, blocker / "f.csv", "csv")


def test_run_scenario_writes_outputs(tmp_path):
    manifest, traj = run_scenario(scenario("stokes-check", **{"time.T": 0.02}), tmp_path)
    assert manifest.status == "ok" and not manifest.missing_outputs()
    data = json.loads((tmp_path / "stokes-check_manifest.json").read_text())
    assert data["verdict"]["label"] == "pass" and data["config_hash"] == traj.cfg.config_hash()


def test_manifest_written_on_failure(tmp_path):
    cfg = parse_config({"mesh": {"nx": 4, "ny": 4}, "time": {"T": 0.01, "dt": 0.01},
                        "laws": {"friction": {"preset": "quadratic", "scale": 50.0}},
                        "output": {"name": "bad"}})
    with pytest.raises(H0Error):
        run_scenario(cfg, tmp_path)
    data = json.loads((tmp_path / "bad_manifest.json").read_text())
    assert data["status"] == "failed" and "H0Error" in data["error"]
    assert data["h0"]["velocity_ok"] is False


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mesh": {"nx": 4, "ny": 4}, "time": {"T": 0.02, "dt": 0.01},
                               "output": {"name": "tiny"}}))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path), "--format", "csv"]) == EXIT_OK
    assert (tmp_path / "tiny_final.csv").exists() and not (tmp_path / "tiny_final.vtu").exists()
    cfg.write_text(json.dumps({"physics": {"viscocity": 1.0}}))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert "did you mean" in capsys.readouterr().err


def test_cli_check_laws_and_mesh_info(tmp_path, capsys):
    assert main(["check-laws", "--scenario", "heated-cavity-slip", "--out-dir", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "check_laws.json").read_text())
    assert report["h0"]["velocity_ok"] and report["friction"]["growth"] > 0
    capsys.readouterr()
    assert main(["mesh-info", "--scenario", "stokes-check", "--identities", "3",
                 "--dump", str(tmp_path / "m.txt")]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["identities"]["passed"] and info["problems"] == []
    assert (tmp_path / "m.txt").exists()


def test_cli_check_laws_flags_violation(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"laws": {"friction": {"preset": "quadratic", "scale": 50.0}}}))
    assert main(["check-laws", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_STUDY


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hvboussinesq.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "manufactured" in r.stdout
    r = subprocess.run([sys.executable, "-m", "hvboussinesq.cli", "run", "--scenario", "nope"],
                       capture_output=True, text=True)
    assert r.returncode == 2
