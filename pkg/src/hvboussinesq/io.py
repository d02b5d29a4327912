"""Field and monitor export, run manifests and the scenario driver."""
from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
import traceback
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import SimConfig, parse_config, scenario
from .integrator import FieldState, MonitorRecord
from .spaces import DiscreteSpaces

FIELD_COLUMNS = ("x", "y", "u1", "u2", "p", "theta")


def fmt(v) -> str:
    """Shortest text that reads back to the same double (17 significant digits)."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def nodal_fields(state: FieldState, spaces: DiscreteSpaces) -> np.ndarray:
    """(n_vertices, 6) table of x, y, u1, u2, p, theta in vertex order."""
    nv = spaces.mesh.n_vertices
    u = spaces.velocity_full(state.u)[:nv]
    th = spaces.temperature_full(state.theta)
    p = state.p if len(state.p) == nv else np.zeros(nv)
    return np.column_stack([spaces.mesh.vertices, u, p, th])


def export_fields(state: FieldState, spaces: DiscreteSpaces, path, format: str | None = None) -> Path:
    path = Path(path)
    format = format or path.suffix.lstrip(".").lower()
    table = nodal_fields(state, spaces)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if format == "csv":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(FIELD_COLUMNS)
                for row in table:
                    w.writerow([fmt(v) for v in row])
        elif format == "vtu":
            _write_vtu(path, spaces, table, state.t)
        else:
            raise ValueError(f"unknown field format {format!r}; use csv or vtu")
    except OSError as exc:
        raise OSError(f"cannot write fields to {path}: {exc.strerror or exc}") from exc
    return path


def read_fields_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != FIELD_COLUMNS:
        raise ValueError(f"unexpected header {rows[0]}")
    return np.array([[float(v) for v in r] for r in rows[1:]])


def _data_array(parent, name, values, ncomp=1, dtype="Float64"):
    el = ET.SubElement(parent, "DataArray", type=dtype, Name=name,
                       NumberOfComponents=str(ncomp), format="ascii")
    el.text = " ".join(fmt(v) for v in np.ravel(values))
    return el


def _write_vtu(path: Path, spaces: DiscreteSpaces, table: np.ndarray, t: float) -> None:
    mesh = spaces.mesh
    root = ET.Element("VTKFile", type="UnstructuredGrid", version="0.1", byte_order="LittleEndian")
    grid = ET.SubElement(root, "UnstructuredGrid")
    fd = ET.SubElement(grid, "FieldData")
    _data_array(fd, "TIME", [t])
    piece = ET.SubElement(grid, "Piece", NumberOfPoints=str(mesh.n_vertices),
                          NumberOfCells=str(mesh.n_triangles))
    pts = ET.SubElement(piece, "Points")
    xyz = np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    _data_array(pts, "Points", xyz, 3)
    cells = ET.SubElement(piece, "Cells")
    _data_array(cells, "connectivity", mesh.triangles, dtype="Int64")
    _data_array(cells, "offsets", 3 * np.arange(1, mesh.n_triangles + 1), dtype="Int64")
    _data_array(cells, "types", np.full(mesh.n_triangles, 5), dtype="UInt8")
    pd = ET.SubElement(piece, "PointData", Scalars="theta", Vectors="velocity")
    vel = np.column_stack([table[:, 2:4], np.zeros(mesh.n_vertices)])
    _data_array(pd, "velocity", vel, 3)
    _data_array(pd, "p", table[:, 4])
    _data_array(pd, "theta", table[:, 5])
    ET.ElementTree(root).write(path, xml_declaration=True, encoding="utf-8")


MONITOR_COLUMNS = tuple(f.name for f in dataclasses.fields(MonitorRecord))


def write_monitors(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MONITOR_COLUMNS)
        for r in records:
            w.writerow([fmt(getattr(r, c)) for c in MONITOR_COLUMNS])
    return path


def write_rows(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt(r.get(c, "")) for c in cols])
    return path


@dataclass
class RunManifest:
    config_hash: str
    code_version: str = __version__
    mesh: dict = field(default_factory=dict)
    h0: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    status: str = "pending"
    error: str | None = None
    traceback: str | None = None
    verdict: dict = field(default_factory=dict)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(_jsonable(dataclasses.asdict(self)), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    def missing_outputs(self) -> list[str]:
        return [p for p in self.outputs.values() if not os.path.exists(p)]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def resolve_config(source) -> SimConfig:
    if isinstance(source, SimConfig):
        return source
    if isinstance(source, dict):
        return parse_config(source)
    if isinstance(source, (str, Path)) and os.path.exists(source):
        return parse_config(source)
    return scenario(str(source))


def run_scenario(source, out_dir, formats=("csv", "vtu")) -> tuple[RunManifest, object]:
    """Run, report and export; the manifest is written even when a stage fails."""
    from .harness import energy_report
    from .integrator import compute_estimates, run, setup

    out = Path(out_dir)
    cfg = resolve_config(source)
    name = cfg.output.get("name", "run")
    manifest = RunManifest(config_hash=cfg.config_hash())
    manifest_path = out / f"{name}_manifest.json"
    t0 = time.perf_counter()
    traj = None
    try:
        mesh, spaces, ops = setup(cfg)
        manifest.mesh = mesh.descriptor()
        est = compute_estimates(cfg, spaces, ops)
        manifest.h0 = est.h0.as_dict()
        manifest.timings["setup"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        traj = run(cfg, mesh, spaces, ops, estimates=est)
        manifest.timings["run"] = time.perf_counter() - t1
        verdict = energy_report(traj)
        manifest.verdict = verdict.as_dict()
        manifest.outputs["monitors"] = str(write_monitors(traj.monitors, out / f"{name}_monitors.csv"))
        for f in formats:
            manifest.outputs[f"fields_{f}"] = str(export_fields(traj.final, spaces, out / f"{name}_final.{f}", f))
        manifest.status = "ok"
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.traceback = traceback.format_exc(limit=3)
        raise
    finally:
        manifest.timings["total"] = time.perf_counter() - t0
        manifest.outputs["manifest"] = str(manifest_path)
        manifest.write(manifest_path)
    return manifest, traj
