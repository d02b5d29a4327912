"""Assembly of the discrete bilinear/trilinear forms.

All ``assemble_*`` functions return matrices on the *full* (unconstrained)
coefficient spaces: Cartesian P2 velocity (index ``2*node + comp``), P1
temperature and P1 pressure.  :class:`SparseOperatorSet` holds the versions
restricted to free DOFs that the time integrator uses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .spaces import (
    DiscreteSpaces,
    korn_matrix,
    scalar_mass,
    scalar_stiffness,
    scatter,
    scatter_vector,
    velocity_mass,
)


def velocity_at_quadrature(spaces: DiscreteSpaces, w_full: np.ndarray) -> np.ndarray:
    """(nt, nq, 2) values of a full Cartesian P2 velocity at element quadrature points."""
    nodal = np.asarray(w_full, dtype=float).reshape(-1, 2)
    return np.einsum("qa,ead->eqd", spaces.elements.p2_vals, nodal[spaces.p2_cells])


def scalar_at_quadrature(spaces: DiscreteSpaces, f_full: np.ndarray) -> np.ndarray:
    return np.asarray(f_full, dtype=float)[spaces.p1_cells] @ spaces.elements.p1_vals.T


def scalar_gradient(spaces: DiscreteSpaces, f_full: np.ndarray) -> np.ndarray:
    """Elementwise-constant gradient (nt, 2) of a P1 field."""
    g = spaces.elements.p1_grads[:, 0]  # P1 gradients are constant per element
    return np.einsum("ead,ea->ed", g, np.asarray(f_full, dtype=float)[spaces.p1_cells])


def assemble_a0(spaces: DiscreteSpaces, alpha: float) -> sp.csr_matrix:
    """a0(u, v) = 2 alpha (eps(u), eps(v))."""
    if not alpha > 0:
        raise ValueError(f"viscosity must be positive, got {alpha}")
    return (alpha * korn_matrix(spaces)).tocsr()


def _p2_advection(spaces: DiscreteSpaces, w_full: np.ndarray) -> sp.csr_matrix:
    el = spaces.elements
    vel = velocity_at_quadrature(spaces, w_full)
    local = _kernels.advection(el.p2_vals, el.p2_grads, vel, el.weights)
    return scatter(local, spaces.p2_cells, spaces.p2_cells, (spaces.n_p2,) * 2)


def assemble_a1(spaces: DiscreteSpaces, w_full: np.ndarray, skew: bool = True) -> sp.csr_matrix:
    """Convection matrix N with z^T N v = a1(w, v, z), or its skew part.

    The skew form realizes (a1(w, v, z) - a1(w, z, v)) / 2 and is exactly
    antisymmetric, so z^T N z = 0 for every z.
    """
    if np.shape(w_full) != (spaces.n_vel,):
        raise ValueError(f"velocity vector must have length {spaces.n_vel}")
    n = _p2_advection(spaces, w_full)
    if skew:
        n = 0.5 * (n - n.T)
    return sp.kron(n, sp.identity(2), format="csr")


def assemble_a1_skew(spaces: DiscreteSpaces, w_full: np.ndarray) -> sp.csr_matrix:
    return assemble_a1(spaces, w_full, skew=True)


def assemble_b1(spaces: DiscreteSpaces, w_full: np.ndarray, skew: bool = True) -> sp.csr_matrix:
    """Temperature convection: zeta^T B eta = b1(w, eta, zeta), or its skew part."""
    if np.shape(w_full) != (spaces.n_vel,):
        raise ValueError(f"velocity vector must have length {spaces.n_vel}")
    el = spaces.elements
    vel = velocity_at_quadrature(spaces, w_full)
    local = _kernels.advection(el.p1_vals, el.p1_grads, vel, el.weights)
    b = scatter(local, spaces.p1_cells, spaces.p1_cells, (spaces.n_p1,) * 2)
    if skew:
        b = (0.5 * (b - b.T)).tocsr()
    return b


def assemble_b1_skew(spaces: DiscreteSpaces, w_full: np.ndarray) -> sp.csr_matrix:
    return assemble_b1(spaces, w_full, skew=True)


def assemble_b0(spaces: DiscreteSpaces, k, mu_full: np.ndarray) -> sp.csr_matrix:
    """b0(mu, eta, zeta) = int k(mu) grad eta . grad zeta."""
    coeff = k(scalar_at_quadrature(spaces, mu_full))
    return scalar_stiffness(spaces, coeff)


def assemble_c(spaces: DiscreteSpaces) -> sp.csr_matrix:
    """Divergence coupling, q^T C v = c(v, q) = -int div(v) q."""
    el = spaces.elements
    local = _kernels.divergence(el.p1_vals, el.p2_grads, el.weights)
    return scatter(local, spaces.p1_cells, spaces.vel_cells, (spaces.n_p1, spaces.n_vel))


def assemble_G(spaces: DiscreteSpaces, theta_lag_full: np.ndarray) -> sp.csr_matrix:
    """Lagged p-Laplacian: int |grad theta_lag|^2 grad phi_i . grad phi_j."""
    g = scalar_gradient(spaces, theta_lag_full)
    coeff = np.broadcast_to(np.sum(g * g, axis=1)[:, None], spaces.elements.weights.shape)
    return scalar_stiffness(spaces, coeff)


def assemble_buoyancy(spaces: DiscreteSpaces) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Mixed mass matrices X_d with (X_d theta)_i = int theta * (e_d . phi_i)."""
    el = spaces.elements
    mm = _kernels.mixed_mass(el.p2_vals, el.p1_vals, el.weights)
    out = []
    for d in range(2):
        rows = 2 * spaces.p2_cells + d
        out.append(scatter(mm, rows, spaces.p1_cells, (spaces.n_vel, spaces.n_p1)))
    return out[0], out[1]


def load_vector_scalar(spaces: DiscreteSpaces, f_q: np.ndarray) -> np.ndarray:
    """P1 load for a source given at element quadrature points (nt, nq)."""
    el = spaces.elements
    local = _kernels.load(el.p1_vals, np.ascontiguousarray(f_q), el.weights)
    return scatter_vector(local, spaces.p1_cells, spaces.n_p1)


def load_vector_velocity(spaces: DiscreteSpaces, f_q: np.ndarray) -> np.ndarray:
    """Cartesian P2 load for a body force given at quadrature points (nt, nq, 2)."""
    el = spaces.elements
    out = np.zeros(spaces.n_vel)
    for d in range(2):
        local = _kernels.load(el.p2_vals, np.ascontiguousarray(f_q[..., d]), el.weights)
        out += scatter_vector(local, 2 * spaces.p2_cells + d, spaces.n_vel)
    return out


def boundary_nonsmooth_residual(spaces: DiscreteSpaces, law, field_trace: np.ndarray,
                                which: str) -> tuple[np.ndarray, np.ndarray]:
    """Boundary term v -> int_{Gamma_1} Dj_m(s) v_tau (or v for temperature).

    ``field_trace`` holds the scalar trace ``s`` at the Gamma_1 quadrature
    points (tangential velocity or temperature).  Returns the residual on
    the full coefficient space and the pointwise multipliers Dj_m(s).
    """
    if not getattr(law, "single_valued", False):
        raise TypeError("boundary residual needs a mollified (single-valued) law")
    bq = spaces.boundary
    s = np.asarray(field_trace, dtype=float)
    if s.shape != (bq.size,):
        raise ValueError(f"trace must have {bq.size} entries, got {s.shape}")
    xi = law.derivative(s)
    if which == "velocity":
        res = bq.trace_tau.T @ (bq.weights * xi)
    elif which == "temperature":
        res = bq.trace_theta.T @ (bq.weights * xi)
    else:
        raise ValueError(f"which must be 'velocity' or 'temperature', got {which!r}")
    return res, xi


@dataclass(eq=False)
class SparseOperatorSet:
    """Operators restricted to free DOFs plus the full-space pieces still needed."""

    spaces: DiscreteSpaces
    korn: sp.csr_matrix        # a0 with alpha = 1, free velocity DOFs
    M_u: sp.csr_matrix
    C: sp.csr_matrix           # (n_p, n_u)
    M_theta: sp.csr_matrix
    K_theta: sp.csr_matrix     # plain temperature stiffness, free DOFs
    buoyancy_x: sp.csr_matrix  # (n_u, n_p1) on full temperature
    buoyancy_y: sp.csr_matrix
    pressure_mass: np.ndarray  # int phi_i for pressure basis
    M_p: sp.csr_matrix
    trace_tau: sp.csr_matrix   # free velocity -> u.tau at Gamma_1 points
    trace_theta: sp.csr_matrix  # free temperature -> theta at Gamma_1 points

    def A0(self, alpha: float) -> sp.csr_matrix:
        if not alpha > 0:
            raise ValueError(f"viscosity must be positive, got {alpha}")
        return (alpha * self.korn).tocsr()

    def convection(self, u_free: np.ndarray) -> sp.csr_matrix:
        P = self.spaces.P_u
        n = P.T @ assemble_a1_skew(self.spaces, P @ u_free) @ P
        return (0.5 * (n - n.T)).tocsr()

    def temperature_convection(self, u_free: np.ndarray) -> sp.csr_matrix:
        P = self.spaces.P_theta
        b = P.T @ assemble_b1_skew(self.spaces, self.spaces.P_u @ u_free) @ P
        return (0.5 * (b - b.T)).tocsr()

    def B0(self, k, theta_free: np.ndarray) -> sp.csr_matrix:
        P = self.spaces.P_theta
        return (P.T @ assemble_b0(self.spaces, k, P @ theta_free) @ P).tocsr()

    def G(self, theta_free: np.ndarray) -> sp.csr_matrix:
        P = self.spaces.P_theta
        return (P.T @ assemble_G(self.spaces, P @ theta_free) @ P).tocsr()

    def buoyancy_load(self, beta: float, e, theta_free: np.ndarray) -> np.ndarray:
        th = self.spaces.P_theta @ theta_free
        return beta * (e[0] * (self.buoyancy_x @ th) + e[1] * (self.buoyancy_y @ th))


def build_operators(spaces: DiscreteSpaces) -> SparseOperatorSet:
    P, Q = spaces.P_u, spaces.P_theta
    bx, by = assemble_buoyancy(spaces)
    Mp = scalar_mass(spaces)
    return SparseOperatorSet(
        spaces=spaces,
        korn=(P.T @ korn_matrix(spaces) @ P).tocsr(),
        M_u=(P.T @ velocity_mass(spaces) @ P).tocsr(),
        C=(assemble_c(spaces) @ P).tocsr(),
        M_theta=(Q.T @ Mp @ Q).tocsr(),
        K_theta=(Q.T @ scalar_stiffness(spaces) @ Q).tocsr(),
        buoyancy_x=(P.T @ bx).tocsr(),
        buoyancy_y=(P.T @ by).tocsr(),
        pressure_mass=np.asarray(Mp.sum(axis=1)).ravel(),
        M_p=Mp,
        trace_tau=(spaces.boundary.trace_tau @ P).tocsr(),
        trace_theta=(spaces.boundary.trace_theta @ Q).tocsr(),
    )
