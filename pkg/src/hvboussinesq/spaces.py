"""Discrete velocity / pressure / temperature spaces with essential constraints.

Velocity is continuous P2 per component, pressure and temperature are P1
(Taylor-Hood for the flow).  Constraints are encoded by prolongation
matrices from free coefficients to full Cartesian coefficient vectors:

* ``u = 0`` at velocity nodes on Gamma_0 (corners shared with Gamma_1
  included),
* ``u . nu = 0`` at the remaining Gamma_1 nodes, whose single free
  coefficient is the tangential component ``u . tau``,
* ``theta = 0`` at temperature nodes on Gamma_0.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .fem import line_rule, p1_basis, p2_basis, p2_line_basis, triangle_rule
from .mesh import GAMMA0, GAMMA1, Mesh, MeshError, validate_mesh


class TraceNormWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class ElementData:
    """Affine geometry and basis tables at the element quadrature points."""

    det: np.ndarray        # (nt,)
    inv_jac: np.ndarray    # (nt, 2, 2)
    ref_points: np.ndarray
    points: np.ndarray     # (nt, nq, 2) physical quadrature points
    weights: np.ndarray    # (nt, nq) physical weights
    p1_vals: np.ndarray
    p1_grads: np.ndarray   # (nt, nq, 3, 2)
    p2_vals: np.ndarray
    p2_grads: np.ndarray   # (nt, nq, 6, 2)


def element_data(mesh: Mesh, order: int = 5) -> ElementData:
    ref_pts, ref_w = triangle_rule(order)
    p = mesh.vertices[mesh.triangles]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.linalg.inv(jac)
    points = p[:, 0][:, None, :] + np.einsum("eij,qj->eqi", jac, ref_pts)
    weights = np.abs(det)[:, None] * ref_w[None, :]
    v1, g1 = p1_basis(ref_pts)
    v2, g2 = p2_basis(ref_pts)
    # grad_phys = J^{-T} grad_ref
    g1p = np.einsum("eji,qaj->eqai", inv, g1)
    g2p = np.einsum("eji,qaj->eqai", inv, g2)
    return ElementData(det, inv, ref_pts, points, weights, v1, g1p, v2, g2p)


def scatter(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sp.csr_matrix:
    """Sum element matrices (ne, nr, nc) into a global CSR matrix."""
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    return sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()


def scatter_vector(local: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(rows.ravel(), weights=local.ravel(), minlength=n)


@dataclass(frozen=True, eq=False)
class BoundaryQuadrature:
    """Gauss points on Gamma_1 with trace evaluation operators."""

    points: np.ndarray     # (nq, 2)
    weights: np.ndarray    # (nq,)
    normals: np.ndarray    # (nq, 2)
    tangents: np.ndarray   # (nq, 2)
    trace_tau: sp.csr_matrix    # full Cartesian velocity -> u . tau
    trace_vec: sp.csr_matrix    # full velocity -> (u_x, u_y) interleaved, (2nq, n_vel)
    trace_theta: sp.csr_matrix  # full temperature -> theta

    @property
    def size(self) -> int:
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class DiscreteSpaces:
    mesh: Mesh
    elements: ElementData
    p2_nodes: np.ndarray        # (n_p2, 2) coordinates
    p2_cells: np.ndarray        # (nt, 6)
    vel_cells: np.ndarray       # (nt, 12) Cartesian velocity dofs, 2*node + comp
    p1_cells: np.ndarray        # (nt, 3)
    velocity_constraints: tuple  # (node, "dirichlet" | "normal") pairs
    temperature_constraints: np.ndarray  # constrained vertex indices
    slip_frames: dict           # node -> (normal, tangent) for Gamma_1 slip nodes
    P_u: sp.csr_matrix          # (n_vel, n_u) free -> full velocity
    P_theta: sp.csr_matrix      # (n_p1, n_theta) free -> full temperature
    free_theta: np.ndarray
    boundary: BoundaryQuadrature

    @property
    def n_p2(self) -> int:
        return len(self.p2_nodes)

    @property
    def n_p1(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_vel(self) -> int:
        return 2 * self.n_p2

    @property
    def n_u(self) -> int:
        return self.P_u.shape[1]

    @property
    def n_theta(self) -> int:
        return self.P_theta.shape[1]

    @property
    def n_p(self) -> int:
        return self.n_p1

    @property
    def has_gamma1(self) -> bool:
        return self.boundary.size > 0

    def velocity_full(self, u_free: np.ndarray) -> np.ndarray:
        """Free coefficients -> (n_p2, 2) nodal Cartesian velocities."""
        return (self.P_u @ u_free).reshape(-1, 2)

    def temperature_full(self, theta_free: np.ndarray) -> np.ndarray:
        return self.P_theta @ theta_free

    def interpolate_velocity(self, fn, t: float | None = None) -> np.ndarray:
        """Nodal interpolant of ``fn(x, y) -> (ux, uy)`` as a full Cartesian vector."""
        x, y = self.p2_nodes[:, 0], self.p2_nodes[:, 1]
        ux, uy = fn(x, y) if t is None else fn(x, y, t)
        out = np.empty(self.n_vel)
        out[0::2] = np.broadcast_to(ux, x.shape)
        out[1::2] = np.broadcast_to(uy, x.shape)
        return out

    def interpolate_scalar(self, fn, t: float | None = None) -> np.ndarray:
        x, y = self.mesh.vertices[:, 0], self.mesh.vertices[:, 1]
        v = fn(x, y) if t is None else fn(x, y, t)
        return np.broadcast_to(np.asarray(v, dtype=float), x.shape).copy()

    def restrict_velocity(self, u_full: np.ndarray) -> np.ndarray:
        """Free coefficients of the constrained nodal projection of ``u_full``."""
        return self.P_u.T @ u_full

    def restrict_temperature(self, theta_full: np.ndarray) -> np.ndarray:
        return theta_full[self.free_theta]


def _boundary_nodes(mesh: Mesh, edge_index: dict) -> tuple[set, dict]:
    nv = mesh.n_vertices
    gamma0 = set()
    normals: dict[int, set] = {}
    for s in mesh.boundary:
        a, b = s.edge
        mid = nv + edge_index[tuple(sorted((a, b)))]
        nodes = (a, b, mid)
        if s.tag == GAMMA0:
            gamma0.update(nodes)
        else:
            for n in nodes:
                normals.setdefault(n, set()).add(s.normal)
    return gamma0, normals


def build_boundary_quadrature(mesh: Mesh, edge_index: dict, n_vel: int, n_gauss: int = 3):
    t, wt = line_rule(n_gauss)
    phi2 = p2_line_basis(t)
    nv = mesh.n_vertices
    segs = mesh.segments(GAMMA1)
    nq = len(segs) * n_gauss
    pts = np.zeros((nq, 2))
    wts = np.zeros(nq)
    nus = np.zeros((nq, 2))
    taus = np.zeros((nq, 2))
    rt, ct, vt = [], [], []
    rv, cv, vv = [], [], []
    rth, cth, vth = [], [], []
    q = 0
    for s in segs:
        a, b = s.edge
        xa, xb = mesh.vertices[a], mesh.vertices[b]
        mid = nv + edge_index[tuple(sorted((a, b)))]
        nodes = (a, b, mid)
        for k in range(n_gauss):
            pts[q] = (1.0 - t[k]) * xa + t[k] * xb
            wts[q] = s.length * wt[k]
            nus[q] = s.normal
            taus[q] = s.tangent
            for node, phi in zip(nodes, phi2[k]):
                for comp in range(2):
                    rt.append(q)
                    ct.append(2 * node + comp)
                    vt.append(phi * s.tangent[comp])
                    rv.append(2 * q + comp)
                    cv.append(2 * node + comp)
                    vv.append(phi)
            rth += [q, q]
            cth += [a, b]
            vth += [1.0 - t[k], t[k]]
            q += 1
    return BoundaryQuadrature(
        points=pts,
        weights=wts,
        normals=nus,
        tangents=taus,
        trace_tau=sp.csr_matrix((vt, (rt, ct)), shape=(nq, n_vel)),
        trace_vec=sp.csr_matrix((vv, (rv, cv)), shape=(2 * nq, n_vel)),
        trace_theta=sp.csr_matrix((vth, (rth, cth)), shape=(nq, nv)),
    )


def build_spaces(mesh: Mesh, quad_order: int = 5, boundary_gauss: int = 3) -> DiscreteSpaces:
    """Taylor-Hood velocity/pressure and P1 temperature spaces on ``mesh``."""
    problems = validate_mesh(mesh)
    if problems:
        raise MeshError("invalid mesh: " + "; ".join(problems))
    if boundary_gauss < 3:
        raise ValueError("Gamma_1 quadrature needs at least 3 Gauss points per edge")

    nv = mesh.n_vertices
    edge_index = {tuple(e): k for k, e in enumerate(mesh.edges)}
    p2_nodes = np.vstack([mesh.vertices, mesh.vertices[mesh.edges].mean(axis=1)])
    p2_cells = np.hstack([mesh.triangles, nv + mesh.tri_edges])
    vel_cells = np.empty((mesh.n_triangles, 12), dtype=np.int64)
    vel_cells[:, 0::2] = 2 * p2_cells
    vel_cells[:, 1::2] = 2 * p2_cells + 1
    n_p2 = len(p2_nodes)

    gamma0, normals = _boundary_nodes(mesh, edge_index)
    constraints = []
    slip = {}
    rows, cols, vals = [], [], []
    col = 0
    for node in range(n_p2):
        if node in gamma0:
            constraints.append((node, "dirichlet"))
            continue
        if node in normals:
            ns = normals[node]
            if len(ns) > 1:  # corner between two slip sides: both components fixed
                constraints.append((node, "dirichlet"))
                continue
            nu = next(iter(ns))
            tau = (nu[1], -nu[0])
            constraints.append((node, "normal"))
            slip[node] = (nu, tau)
            for comp in range(2):
                if tau[comp] != 0.0:
                    rows.append(2 * node + comp)
                    cols.append(col)
                    vals.append(tau[comp])
            col += 1
            continue
        for comp in range(2):
            rows.append(2 * node + comp)
            cols.append(col)
            vals.append(1.0)
            col += 1
    P_u = sp.csr_matrix((vals, (rows, cols)), shape=(2 * n_p2, col))

    theta_fixed = np.array(sorted(n for n in gamma0 if n < nv), dtype=np.int64)
    free_theta = np.setdiff1d(np.arange(nv), theta_fixed)
    P_theta = sp.csr_matrix(
        (np.ones(len(free_theta)), (free_theta, np.arange(len(free_theta)))),
        shape=(nv, len(free_theta)),
    )

    return DiscreteSpaces(
        mesh=mesh,
        elements=element_data(mesh, quad_order),
        p2_nodes=p2_nodes,
        p2_cells=p2_cells,
        vel_cells=vel_cells,
        p1_cells=mesh.triangles.copy(),
        velocity_constraints=tuple(constraints),
        temperature_constraints=theta_fixed,
        slip_frames=slip,
        P_u=P_u,
        P_theta=P_theta,
        free_theta=free_theta,
        boundary=build_boundary_quadrature(mesh, edge_index, 2 * n_p2, boundary_gauss),
    )


# --- Gram matrices and trace norms ---------------------------------------

def korn_matrix(spaces: DiscreteSpaces) -> sp.csr_matrix:
    """a0 with alpha = 1 on the full Cartesian velocity space."""
    el = spaces.elements
    local = _kernels.elasticity(el.p2_grads, el.weights)
    return scatter(local, spaces.vel_cells, spaces.vel_cells, (spaces.n_vel,) * 2)


def velocity_mass(spaces: DiscreteSpaces) -> sp.csr_matrix:
    el = spaces.elements
    m = _kernels.mass(el.p2_vals, el.weights)
    ne, nb, _ = m.shape
    local = np.zeros((ne, 2 * nb, 2 * nb))
    local[:, 0::2, 0::2] = m
    local[:, 1::2, 1::2] = m
    return scatter(local, spaces.vel_cells, spaces.vel_cells, (spaces.n_vel,) * 2)


def scalar_mass(spaces: DiscreteSpaces) -> sp.csr_matrix:
    el = spaces.elements
    local = _kernels.mass(el.p1_vals, el.weights)
    return scatter(local, spaces.p1_cells, spaces.p1_cells, (spaces.n_p1,) * 2)


def scalar_stiffness(spaces: DiscreteSpaces, coeff: np.ndarray | None = None) -> sp.csr_matrix:
    el = spaces.elements
    w = el.weights if coeff is None else el.weights * coeff
    local = _kernels.stiffness(el.p1_grads, w)
    return scatter(local, spaces.p1_cells, spaces.p1_cells, (spaces.n_p1,) * 2)


def boundary_gram(spaces: DiscreteSpaces, which: str) -> sp.csr_matrix:
    bq = spaces.boundary
    if which == "velocity":
        T = bq.trace_vec
        W = sp.diags(np.repeat(bq.weights, 2))
    else:
        T = bq.trace_theta
        W = sp.diags(bq.weights)
    return (T.T @ W @ T).tocsr()


def largest_generalized_eig(B, A, method: str = "auto", tol: float = 1e-13,
                            maxiter: int = 50000, seed: int = 0) -> float:
    """Largest lambda with B v = lambda A v, A symmetric positive definite."""
    n = A.shape[0]
    if n == 0:
        return 0.0
    if method == "auto":
        method = "dense" if n <= 1500 else "arpack"
    if method == "dense":
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
        return float(scipy.linalg.eigh(Bd, Ad, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])
    if method == "arpack":
        # fixed start vector: ARPACK otherwise draws one at random
        v0 = np.random.default_rng(seed).standard_normal(n)
        vals = spla.eigsh(sp.csc_matrix(B), k=1, M=sp.csc_matrix(A), which="LA",
                          return_eigenvectors=False, tol=0, v0=v0)
        return float(vals[0])
    if method == "power":
        lu = spla.splu(sp.csc_matrix(A))
        x = np.random.default_rng(seed).standard_normal(n)
        lam = 0.0
        for _ in range(maxiter):
            y = lu.solve(B @ x)
            ny = np.sqrt(y @ (A @ y))
            if ny == 0.0:
                return 0.0
            x = y / ny
            new = float(x @ (B @ x))
            if abs(new - lam) <= tol * abs(new):
                return new
            lam = new
        return lam
    raise ValueError(f"unknown eigen method {method!r}")


def estimate_trace_norm(spaces: DiscreteSpaces, which: str, method: str = "auto") -> float:
    """Discrete operator norm of the Gamma_1 trace.

    Velocity: L2(Gamma_1)^2 trace against the a0 (alpha = 1) energy on free
    DOFs.  Temperature: L2(Gamma_1) trace against the full H1 inner product.
    """
    if which not in ("velocity", "temperature"):
        raise ValueError(f"which must be 'velocity' or 'temperature', got {which!r}")
    if not spaces.has_gamma1:
        warnings.warn("Gamma_1 is empty; trace norm reported as 0", TraceNormWarning, stacklevel=2)
        return 0.0
    if which == "velocity":
        P = spaces.P_u
        A = P.T @ korn_matrix(spaces) @ P
    else:
        P = spaces.P_theta
        A = P.T @ (scalar_stiffness(spaces) + scalar_mass(spaces)) @ P
    B = P.T @ boundary_gram(spaces, which) @ P
    return float(np.sqrt(max(largest_generalized_eig(B, A, method), 0.0)))


@dataclass(frozen=True)
class TraceNorms:
    gamma_s_norm: float
    gamma_norm: float


def trace_norms(spaces: DiscreteSpaces, method: str = "auto") -> TraceNorms:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TraceNormWarning)
        return TraceNorms(
            estimate_trace_norm(spaces, "velocity", method),
            estimate_trace_norm(spaces, "temperature", method),
        )
