"""Structured triangulations of axis-aligned rectangles with a tagged boundary."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

GAMMA0 = "gamma0"
GAMMA1 = "gamma1"
SIDES = ("bottom", "right", "top", "left")

_OUTWARD = {
    "bottom": (0.0, -1.0),
    "right": (1.0, 0.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
}


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class BoundarySegment:
    edge: tuple[int, int]
    tag: str
    normal: tuple[float, float]
    tangent: tuple[float, float]
    length: float
    side: str = ""


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary: tuple[BoundarySegment, ...]
    domain: tuple[float, float, float, float]  # x0, x1, y0, y1
    nx: int = 0
    ny: int = 0
    edges: np.ndarray = field(default=None, repr=False)
    tri_edges: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.edges is None:
            edges, tri_edges = _edge_tables(self.triangles)
            object.__setattr__(self, "edges", edges)
            object.__setattr__(self, "tri_edges", tri_edges)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def width(self) -> float:
        return self.domain[1] - self.domain[0]

    @property
    def height(self) -> float:
        return self.domain[3] - self.domain[2]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def segments(self, tag: str | None = None) -> list[BoundarySegment]:
        return [s for s in self.boundary if tag is None or s.tag == tag]

    def gamma1_length(self) -> float:
        return float(sum(s.length for s in self.segments(GAMMA1)))

    def descriptor(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "domain": list(self.domain),
            "n_vertices": self.n_vertices,
            "n_triangles": self.n_triangles,
            "gamma1_sides": sorted({s.side for s in self.segments(GAMMA1)}),
        }


def _edge_tables(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    local = np.array([[0, 1], [1, 2], [2, 0]])
    all_edges = np.sort(triangles[:, local], axis=2).reshape(-1, 2)
    edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def _resolve_tagging(tagging) -> dict[str, str]:
    if isinstance(tagging, Mapping):
        tags = {}
        for side in SIDES:
            tag = tagging.get(side, GAMMA0)
            if tag not in (GAMMA0, GAMMA1):
                raise MeshError(f"side {side!r}: unknown tag {tag!r}")
            tags[side] = tag
        unknown = set(tagging) - set(SIDES)
        if unknown:
            raise MeshError(f"unknown boundary sides {sorted(unknown)}")
        return tags
    gamma1 = set(tagging or ())
    unknown = gamma1 - set(SIDES)
    if unknown:
        raise MeshError(f"unknown boundary sides {sorted(unknown)}")
    return {side: GAMMA1 if side in gamma1 else GAMMA0 for side in SIDES}


def build_rect_mesh(
    nx: int,
    ny: int,
    tagging: Iterable[str] | Mapping[str, str] = (),
    width: float = 1.0,
    height: float = 1.0,
    origin: tuple[float, float] = (0.0, 0.0),
) -> Mesh:
    """Triangulate ``[x0, x0+width] x [y0, y0+height]`` into ``2 nx ny`` triangles.

    ``tagging`` is either the collection of sides belonging to Gamma_1 or a
    mapping side -> tag.  Cell diagonals are mirrored per quadrant so that
    every corner vertex is shared by two triangles; meshes with even cell
    counts are nested under uniform refinement.
    """
    if nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
    if width <= 0 or height <= 0:
        raise MeshError("rectangle extents must be positive")
    tags = _resolve_tagging(tagging)
    if all(t == GAMMA1 for t in tags.values()):
        raise MeshError("Gamma_0 must be nonempty")

    x0, y0 = origin
    xs = x0 + width * np.arange(nx + 1) / nx
    ys = y0 + height * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            left = 2 * i + 1 <= nx
            bottom = 2 * j + 1 <= ny
            if left == bottom:
                tris += [(v00, v10, v11), (v00, v11, v01)]
            else:
                tris += [(v00, v10, v01), (v10, v11, v01)]
    triangles = np.array(tris, dtype=np.int64)

    # counter-clockwise loop: bottom, right, top, left
    boundary = []
    hx, hy = width / nx, height / ny

    def seg(a, b, side, length):
        nu = _OUTWARD[side]
        tau = (nu[1], -nu[0])
        boundary.append(BoundarySegment((a, b), tags[side], nu, tau, length, side))

    for i in range(nx):
        seg(vid(i, 0), vid(i + 1, 0), "bottom", hx)
    for j in range(ny):
        seg(vid(nx, j), vid(nx, j + 1), "right", hy)
    for i in range(nx, 0, -1):
        seg(vid(i, ny), vid(i - 1, ny), "top", hx)
    for j in range(ny, 0, -1):
        seg(vid(0, j), vid(0, j - 1), "left", hy)

    return Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary=tuple(boundary),
        domain=(x0, x0 + width, y0, y0 + height),
        nx=nx,
        ny=ny,
    )


def validate_mesh(mesh: Mesh) -> list[str]:
    """Return human-readable invariant violations; empty iff the mesh is valid."""
    report = []
    areas = mesh.signed_areas()
    for k in np.flatnonzero(areas <= 0.0):
        report.append(f"triangle {k} has non-positive signed area {areas[k]:.3e}")

    edges, tri_edges = _edge_tables(mesh.triangles)
    counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
    topo_boundary = {tuple(e) for e in edges[counts == 1]}
    declared = [tuple(sorted(s.edge)) for s in mesh.boundary]
    if len(set(declared)) != len(declared):
        report.append("boundary edge listed more than once")
    if set(declared) != topo_boundary:
        missing = len(topo_boundary - set(declared))
        extra = len(set(declared) - topo_boundary)
        report.append(
            f"boundary edges do not cover the boundary exactly once "
            f"({missing} missing, {extra} not on the boundary)"
        )

    # closed loop: consecutive segments share endpoints
    for k, s in enumerate(mesh.boundary):
        nxt = mesh.boundary[(k + 1) % len(mesh.boundary)]
        if s.edge[1] != nxt.edge[0]:
            report.append(f"boundary loop broken between segments {k} and {k + 1}")
            break

    untagged = [k for k, s in enumerate(mesh.boundary) if s.tag not in (GAMMA0, GAMMA1)]
    if untagged:
        report.append(
            f"incomplete boundary partition: {len(untagged)} untagged edge(s), first {untagged[0]}"
        )
    if not any(s.tag == GAMMA0 for s in mesh.boundary):
        report.append("Gamma_0 is empty")

    edge_owner = {}
    for t, tri in enumerate(mesh.triangles):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            edge_owner[tuple(sorted((tri[a], tri[b])))] = t
    for k, s in enumerate(mesh.boundary):
        nu = np.asarray(s.normal)
        tau = np.asarray(s.tangent)
        if abs(np.linalg.norm(nu) - 1.0) > 1e-14 or abs(np.linalg.norm(tau) - 1.0) > 1e-14:
            report.append(f"boundary segment {k}: frame vectors not unit")
        if abs(nu @ tau) > 1e-14:
            report.append(f"boundary segment {k}: normal and tangent not orthogonal")
        owner = edge_owner.get(tuple(sorted(s.edge)))
        if owner is not None:
            centroid = mesh.vertices[mesh.triangles[owner]].mean(axis=0)
            mid = mesh.vertices[list(s.edge)].mean(axis=0)
            if nu @ (mid - centroid) <= 0.0:
                report.append(f"boundary segment {k}: normal points inward")
        length = np.linalg.norm(mesh.vertices[s.edge[1]] - mesh.vertices[s.edge[0]])
        if abs(length - s.length) > 1e-12 * max(1.0, length):
            report.append(f"boundary segment {k}: stored length {s.length} != {length}")
    return report


def dump_mesh(mesh: Mesh, path: str | Path) -> Path:
    """Write a plain-text node/element/edge-tag listing."""
    path = Path(path)
    lines = [f"# mesh nx={mesh.nx} ny={mesh.ny} domain={' '.join(map(repr, mesh.domain))}"]
    lines += [f"node {i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.vertices)]
    lines += [f"tri {k} {a} {b} {c}" for k, (a, b, c) in enumerate(mesh.triangles)]
    lines += [f"edge {s.edge[0]} {s.edge[1]} {s.tag} {s.side}" for s in mesh.boundary]
    path.write_text("\n".join(lines) + "\n")
    return path
