"""Time-retarded, decoupled Boussinesq integrator.

Each step solves a backward-Euler Oseen/Stokes saddle system for (u, p) with
the temperature taken from ``lag`` steps back, then a linear heat step with
velocity and conductivity coefficients taken from ``lag`` steps back and the
lagged p-Laplacian regularizer weighted by ``h = lag * dt``.  The mollified
boundary laws are the only nonlinearity inside a step and are handled by
Picard iteration on a fixed LU factorization.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import SimConfig
from .forms import (
    SparseOperatorSet,
    build_operators,
    load_vector_scalar,
    load_vector_velocity,
    scalar_at_quadrature,
    scalar_gradient,
    velocity_at_quadrature,
)
from .laws import H0Report, LawConstants, check_H0, estimate_constants, mollify
from .mesh import Mesh, build_rect_mesh
from .spaces import (
    DiscreteSpaces,
    TraceNorms,
    build_spaces,
    largest_generalized_eig,
    trace_norms,
    velocity_mass,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class PicardError(SolverError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class H0Error(SolverError):
    pass


class PicardStallWarning(RuntimeWarning):
    pass


class LaggedFactorization:
    """Direct solves that reuse a stale LU factorization as a preconditioner.

    Each solve runs iterative refinement with the cached factors; when the
    contraction is poor the current matrix is refactored.  Step matrices
    change only through lagged coefficients, so refactoring is rare when
    dt is small.
    """

    def __init__(self, rtol: float = 1e-13, max_refine: int = 8):
        self.rtol = rtol
        self.max_refine = max_refine
        self.lu = None
        self.factorizations = 0

    def _factor(self, A):
        self.lu = spla.splu(sp.csc_matrix(A))
        self.factorizations += 1

    def solve(self, A, b: np.ndarray) -> np.ndarray:
        if self.lu is None:
            self._factor(A)
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros_like(b)
        x = self.lu.solve(b)
        prev = math.inf
        for _ in range(self.max_refine):
            r = b - A @ x
            rn = float(np.linalg.norm(r))
            if rn <= self.rtol * bnorm:
                return x
            if rn > 0.25 * prev:
                break
            prev = rn
            x = x + self.lu.solve(r)
        self._factor(A)
        x = self.lu.solve(b)
        return x + self.lu.solve(b - A @ x)



@dataclass(eq=False)
class FieldState:
    t: float
    u: np.ndarray       # free velocity coefficients
    p: np.ndarray       # zero-mean pressure
    theta: np.ndarray   # free temperature coefficients
    xi: np.ndarray      # friction multiplier at Gamma_1 points
    xi1: np.ndarray     # heat-flux multiplier at Gamma_1 points


class HistoryBuffer:
    """Recent states for lagged access; the initial state is always kept."""

    def __init__(self, initial: FieldState, lag: int):
        self.initial = initial
        self.lag = lag
        self._states = {0: initial}
        self.latest = 0

    def push(self, n: int, state: FieldState) -> None:
        if n != self.latest + 1:
            raise ValueError(f"expected step {self.latest + 1}, got {n}")
        self._states[n] = state
        self.latest = n
        for k in [k for k in self._states if 0 < k < n - self.lag]:
            del self._states[k]

    def __getitem__(self, n: int) -> FieldState:
        return self._states[n]


def retard(buffer: HistoryBuffer, n: int, lag: int) -> FieldState:
    """State at step max(n - lag, 0): g_h(t) = g(t - h), clamped to g(0)."""
    return buffer[max(n - lag, 0)]


@dataclass(frozen=True)
class Estimates:
    """Constants entering the smallness condition and the energy monitor."""

    norms: TraceNorms
    poincare_u: float       # sup |u|_L2 / |u|_E on free velocity DOFs
    poincare_theta: float   # sup |theta|_L2 / |grad theta|_L2
    friction: LawConstants
    heat_flux: LawConstants
    gamma1_length: float
    h0: H0Report


@dataclass
class StepInfo:
    iterations: int
    history: list
    damped: bool
    xi_eff: np.ndarray      # multiplier actually present in the final linear system
    load_l2sq: float        # |forcing|_L2^2 used by the energy bound


@dataclass
class MonitorRecord:
    step: int
    t: float
    kinetic: float
    viscous_increment: float
    thermal: float
    thermal_dissipation_increment: float
    regularizer_increment: float
    friction_work_increment: float
    flux_work_increment: float
    picard_u: int
    picard_theta: int
    slack_u: float
    slack_theta: float
    slack_scale_u: float
    slack_scale_theta: float
    energy_norm_u: float    # |u|_E^2 = a0(u, u) / alpha
    grad_theta_sq: float
    divergence_residual: float
    xi_bound_ratio: float
    xi1_bound_ratio: float
    xi_l2sq: float
    xi1_l2sq: float
    w14_theta: float        # (int |grad theta|^4)^(1/4)

    @property
    def slack(self) -> float:
        return min(self.slack_u, self.slack_theta)

    @property
    def relative_slack(self) -> float:
        return min(self.slack_u / max(self.slack_scale_u, 1e-300),
                   self.slack_theta / max(self.slack_scale_theta, 1e-300))


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    u: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    xi: np.ndarray
    xi1: np.ndarray
    monitors: list = field(default_factory=list)
    estimates: Estimates | None = None
    cfg: SimConfig | None = None
    spaces: DiscreteSpaces | None = None

    @property
    def final(self) -> FieldState:
        return FieldState(self.times[-1], self.u[-1], self.p[-1], self.theta[-1], self.xi[-1], self.xi1[-1])


def saddle_matrix(K, C) -> sp.csc_matrix:
    """[[K, C^T], [C, 0]] with the first pressure unknown pinned (row and column removed).

    The dropped continuity row is implied by the others because constrained
    velocities have zero normal trace; the pressure is shifted to zero mean afterwards.
    """
    Cp = C[1:]
    return sp.bmat([[K, Cp.T], [Cp, None]], format="csc")


def unpin_pressure(p_rest: np.ndarray, pressure_mass: np.ndarray) -> np.ndarray:
    p = np.concatenate([[0.0], p_rest])
    return p - (pressure_mass @ p) / pressure_mass.sum()


def compute_estimates(cfg: SimConfig, spaces: DiscreteSpaces, ops: SparseOperatorSet,
                      method: str = "auto") -> Estimates:
    norms = trace_norms(spaces, method)
    cu = math.sqrt(largest_generalized_eig(ops.M_u, ops.korn, method))
    ct = math.sqrt(largest_generalized_eig(ops.M_theta, ops.K_theta, method)) if spaces.n_theta else 0.0
    cj = estimate_constants(cfg.friction, cfg.constants_range)
    cj1 = estimate_constants(cfg.heat_flux, cfg.constants_range)
    h0 = check_H0(cj, cj1, cfg.alpha, cfg.conductivity, norms)
    return Estimates(norms, cu, ct, cj, cj1, spaces.mesh.gamma1_length(), h0)


class Stepper:
    """Per-run cache of the constant matrices and mollified laws."""

    def __init__(self, cfg: SimConfig, spaces: DiscreteSpaces, ops: SparseOperatorSet):
        for name in ("source_g", "body_force", "u0", "theta0"):
            f = getattr(cfg, name)
            if f.kind == "manufactured" and f.fn is None:
                raise SolverError(f"{name}: manufactured field has no attached callable")
        self.cfg, self.spaces, self.ops = cfg, spaces, ops
        self.dt = cfg.dt
        self.A0 = ops.A0(cfg.alpha)
        self.K0 = (ops.M_u / self.dt + self.A0).tocsr()
        self.friction = mollify(cfg.friction, cfg.mollification_m)
        self.heat_flux = mollify(cfg.heat_flux, cfg.mollification_m)
        self.w_bnd = spaces.boundary.weights
        self.friction_active = spaces.has_gamma1 and not cfg.friction.is_zero()
        self.flux_active = spaces.has_gamma1 and not cfg.heat_flux.is_zero()
        self.velocity_solver = LaggedFactorization()
        self.temperature_solver = LaggedFactorization()

    # --- loads ---------------------------------------------------------------
    def _quad_points(self):
        pts = self.spaces.elements.points
        return pts[..., 0], pts[..., 1]

    def velocity_load(self, theta_lag: np.ndarray, t: float) -> tuple[np.ndarray, float]:
        cfg, ops = self.cfg, self.ops
        load = ops.buoyancy_load(cfg.buoyancy.beta, cfg.buoyancy.e, theta_lag)
        th_q = scalar_at_quadrature(self.spaces, self.spaces.P_theta @ theta_lag)
        fx = cfg.buoyancy.beta * cfg.buoyancy.e[0] * th_q
        fy = cfg.buoyancy.beta * cfg.buoyancy.e[1] * th_q
        if not cfg.body_force.is_zero():
            x, y = self._quad_points()
            bx, by = cfg.body_force(x, y, t)
            f_q = np.stack([np.broadcast_to(bx, x.shape), np.broadcast_to(by, x.shape)], axis=-1)
            load = load + self.spaces.P_u.T @ load_vector_velocity(self.spaces, f_q)
            fx, fy = fx + f_q[..., 0], fy + f_q[..., 1]
        l2sq = float(np.sum(self.spaces.elements.weights * (fx * fx + fy * fy)))
        return load, l2sq

    def temperature_load(self, t: float) -> tuple[np.ndarray, float]:
        g = self.cfg.source_g
        if g.is_zero():
            return np.zeros(self.spaces.n_theta), 0.0
        x, y = self._quad_points()
        g_q = np.broadcast_to(g(x, y, t), x.shape)
        load = self.spaces.P_theta.T @ load_vector_scalar(self.spaces, g_q)
        return load, float(np.sum(self.spaces.elements.weights * g_q * g_q))

    # --- Picard driver -------------------------------------------------------
    def _picard(self, solve, x0, trace, law, active, mass, what):
        cfg = self.cfg
        if not active:
            x = solve(None)
            nb = self.spaces.boundary.size
            return x, StepInfo(1, [], False, np.zeros(nb), 0.0)
        xk = x0
        history = []
        omega = 1.0
        xi_eff = None
        for it in range(1, cfg.picard_max + 1):
            xi = law.derivative(trace(xk))
            xnew = solve(xi)
            if omega < 1.0:
                xnew = xk + omega * (xnew - xk)
                xi_eff = xi_eff + omega * (xi - xi_eff)
            else:
                xi_eff = xi
            d = xnew[: mass.shape[0]] - xk[: mass.shape[0]]
            inc = math.sqrt(max(float(d @ (mass @ d)), 0.0))
            history.append(inc)
            xk = xnew
            if inc <= cfg.picard_tol:
                return xk, StepInfo(it, history, omega < 1.0, xi_eff, 0.0)
            if it == cfg.picard_damping_after and omega == 1.0:
                omega = 0.5
                warnings.warn(
                    f"{what} Picard iteration stalled after {it} iterations "
                    f"(last increment {inc:.3e}); switching to damping 0.5 - consider a smaller dt",
                    PicardStallWarning, stacklevel=3)
        raise PicardError(
            f"{what} Picard iteration did not converge in {cfg.picard_max} iterations "
            f"(last increments {history[-3:]}); reduce dt or the mollification level",
            history)

    # --- steps ---------------------------------------------------------------
    def step_velocity(self, state: FieldState, theta_lag: np.ndarray, t_new: float):
        ops, spaces = self.ops, self.spaces
        nu, npr = spaces.n_u, spaces.n_p
        K = (self.K0 + ops.convection(state.u)).tocsr()
        S = saddle_matrix(K, ops.C).tocsr()
        load, l2sq = self.velocity_load(theta_lag, t_new)
        base = ops.M_u @ state.u / self.dt + load
        Tt = ops.trace_tau

        def solve(xi):
            rhs = np.zeros(nu + npr - 1)
            rhs[:nu] = base if xi is None else base - Tt.T @ (self.w_bnd * xi)
            return self.velocity_solver.solve(S, rhs)

        x0 = np.concatenate([state.u, np.zeros(npr - 1)])
        x, info = self._picard(solve, x0, lambda x: Tt @ x[:nu], self.friction,
                               self.friction_active, ops.M_u, "velocity")
        info.load_l2sq = l2sq
        u, p = x[:nu], unpin_pressure(x[nu:], ops.pressure_mass)
        xi = self.friction.derivative(Tt @ u) if self.friction_active else np.zeros(spaces.boundary.size)
        return u, p, xi, info

    def step_temperature(self, state: FieldState, u_lag: np.ndarray, theta_lag: np.ndarray,
                         t_new: float):
        ops, cfg = self.ops, self.cfg
        A = ops.M_theta / self.dt + ops.B0(cfg.conductivity, theta_lag) + ops.temperature_convection(u_lag)
        if cfg.regularize:
            A = A + cfg.h * ops.G(theta_lag)
        A = A.tocsr()
        load, l2sq = self.temperature_load(t_new)
        base = ops.M_theta @ state.theta / self.dt + load
        Tq = ops.trace_theta

        def solve(xi):
            return self.temperature_solver.solve(A, base if xi is None else base - Tq.T @ (self.w_bnd * xi))

        theta, info = self._picard(solve, state.theta, lambda th: Tq @ th, self.heat_flux,
                                   self.flux_active, ops.M_theta, "temperature")
        info.load_l2sq = l2sq
        xi1 = self.heat_flux.derivative(Tq @ theta) if self.flux_active else np.zeros(self.spaces.boundary.size)
        return theta, xi1, info


def step_velocity(state, theta_lag, ops, cfg, t_new=None):
    """Single velocity step; see :meth:`Stepper.step_velocity`."""
    st = Stepper(cfg, ops.spaces, ops)
    return st.step_velocity(state, theta_lag, state.t + cfg.dt if t_new is None else t_new)


def step_temperature(state, u_lag, theta_lag, ops, cfg, t_new=None):
    st = Stepper(cfg, ops.spaces, ops)
    return st.step_temperature(state, u_lag, theta_lag, state.t + cfg.dt if t_new is None else t_new)


def initial_state(cfg: SimConfig, spaces: DiscreteSpaces, ops: SparseOperatorSet) -> FieldState:
    """L2-project u0 onto discretely divergence-free constrained velocities; interpolate theta0."""
    nu, npr = spaces.n_u, spaces.n_p
    nb = spaces.boundary.size
    if cfg.u0.is_zero():
        u = np.zeros(nu)
    else:
        u_full = spaces.interpolate_velocity(lambda x, y: cfg.u0(x, y, 0.0))
        rhs_u = spaces.P_u.T @ (velocity_mass(spaces) @ u_full)
        S = saddle_matrix(ops.M_u, ops.C)
        sol = spla.splu(S).solve(np.concatenate([rhs_u, np.zeros(npr - 1)]))
        u = sol[:nu]
    if cfg.theta0.is_zero():
        theta = np.zeros(spaces.n_theta)
    else:
        theta = spaces.restrict_temperature(spaces.interpolate_scalar(lambda x, y: cfg.theta0(x, y, 0.0)))
    return FieldState(0.0, u, np.zeros(npr), theta, np.zeros(nb), np.zeros(nb))


def setup(cfg: SimConfig) -> tuple[Mesh, DiscreteSpaces, SparseOperatorSet]:
    mesh = build_rect_mesh(cfg.nx, cfg.ny, cfg.gamma1_sides, cfg.width, cfg.height)
    spaces = build_spaces(mesh)
    return mesh, spaces, build_operators(spaces)


def _energy_monitor(step, t, st: Stepper, est: Estimates, old: FieldState, u, theta, xi, xi1,
                    info_u: StepInfo, info_t: StepInfo, theta_lag, u_lag) -> MonitorRecord:
    cfg, ops, dt = st.cfg, st.ops, st.dt
    w = st.w_bnd
    alpha = cfg.alpha
    delta = cfg.conductivity.delta
    m = cfg.mollification_m
    L = est.gamma1_length

    Ku_old = 0.5 * float(old.u @ (ops.M_u @ old.u))
    Ku = 0.5 * float(u @ (ops.M_u @ u))
    e_u = float(u @ (ops.korn @ u))
    s = ops.trace_tau @ u
    c0, gs = est.friction.growth, est.norms.gamma_s_norm
    corr_u = float(np.sum(w * np.abs(s) * np.maximum(0.0, np.abs(info_u.xi_eff) - c0 * (1 + 1 / m + np.abs(s)))))
    bnd_u = c0 * (1 + 1 / m) * math.sqrt(L) * gs * math.sqrt(e_u) + c0 * gs ** 2 * e_u + corr_u
    rhs_u = dt * (est.poincare_u ** 2 * info_u.load_l2sq / (2 * alpha) + bnd_u)
    lhs_u = Ku - Ku_old + dt * 0.5 * alpha * e_u
    slack_u = rhs_u - lhs_u
    scale_u = max(Ku, Ku_old, abs(rhs_u), abs(lhs_u), 1e-300)

    Kt_old = 0.5 * float(old.theta @ (ops.M_theta @ old.theta))
    Kt = 0.5 * float(theta @ (ops.M_theta @ theta))
    grad_sq = float(theta @ (ops.K_theta @ theta))
    e_t = grad_sq + 2 * Kt
    r = ops.trace_theta @ theta
    c1, g = est.heat_flux.growth, est.norms.gamma_norm
    corr_t = float(np.sum(w * np.abs(r) * np.maximum(0.0, np.abs(info_t.xi_eff) - c1 * (1 + 1 / m + np.abs(r)))))
    bnd_t = c1 * (1 + 1 / m) * math.sqrt(L) * g * math.sqrt(e_t) + c1 * g ** 2 * e_t + corr_t
    G_term = float(theta @ (ops.G(theta_lag) @ theta)) if cfg.regularize else 0.0
    rhs_t = dt * (est.poincare_theta ** 2 * info_t.load_l2sq / (2 * delta) + bnd_t)
    lhs_t = Kt - Kt_old + dt * 0.5 * delta * grad_sq + dt * cfg.h * G_term
    slack_t = rhs_t - lhs_t
    scale_t = max(Kt, Kt_old, abs(rhs_t), abs(lhs_t), 1e-300)

    b0 = float(theta @ (ops.B0(cfg.conductivity, theta_lag) @ theta))
    c0b = c0 if c0 > 0 else 1.0
    c1b = c1 if c1 > 0 else 1.0
    xi_ratio = float(np.max(np.abs(xi) / (c0b * (1 + np.abs(s) + c0b / m)), initial=0.0))
    xi1_ratio = float(np.max(np.abs(xi1) / (c1b * (1 + np.abs(r) + c1b / m)), initial=0.0))
    return MonitorRecord(
        step=step, t=t, kinetic=Ku, viscous_increment=dt * alpha * e_u, thermal=Kt,
        thermal_dissipation_increment=dt * b0, regularizer_increment=dt * cfg.h * G_term,
        friction_work_increment=dt * float(np.sum(w * xi * s)),
        flux_work_increment=dt * float(np.sum(w * xi1 * r)),
        picard_u=info_u.iterations, picard_theta=info_t.iterations,
        slack_u=slack_u, slack_theta=slack_t, slack_scale_u=scale_u, slack_scale_theta=scale_t,
        energy_norm_u=e_u, grad_theta_sq=grad_sq,
        divergence_residual=float(np.linalg.norm(ops.C @ u)),
        xi_bound_ratio=xi_ratio, xi1_bound_ratio=xi1_ratio,
        xi_l2sq=float(np.sum(w * xi * xi)), xi1_l2sq=float(np.sum(w * xi1 * xi1)),
        w14_theta=_w14(st.spaces, theta),
    )


def _w14(spaces: DiscreteSpaces, theta: np.ndarray) -> float:
    g = scalar_gradient(spaces, spaces.P_theta @ theta)
    area = spaces.elements.weights.sum(axis=1)
    return float(np.sum(area * np.sum(g * g, axis=1) ** 2)) ** 0.25


def run(cfg: SimConfig, mesh: Mesh | None = None, spaces: DiscreteSpaces | None = None,
        ops: SparseOperatorSet | None = None, estimates: Estimates | None = None,
        callback=None) -> Trajectory:
    """Advance from t = 0 to T; returns the full trajectory with per-step monitors."""
    if spaces is None:
        mesh, spaces, ops = setup(cfg)
    elif ops is None:
        ops = build_operators(spaces)
    est = estimates or compute_estimates(cfg, spaces, ops)
    if not est.h0.passed:
        msg = (f"smallness condition violated (velocity margin {est.h0.velocity_margin:.4g}, "
               f"temperature margin {est.h0.temperature_margin:.4g})")
        if not cfg.allow_h0_violation:
            raise H0Error(msg + "; set solver.allow_h0_violation to override")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    st = Stepper(cfg, spaces, ops)
    state = initial_state(cfg, spaces, ops)
    N = cfg.n_steps
    nb = spaces.boundary.size
    times = cfg.dt * np.arange(N + 1)
    U = np.zeros((N + 1, spaces.n_u))
    Pm = np.zeros((N + 1, spaces.n_p))
    TH = np.zeros((N + 1, spaces.n_theta))
    XI = np.zeros((N + 1, nb))
    XI1 = np.zeros((N + 1, nb))
    U[0], TH[0] = state.u, state.theta
    buffer = HistoryBuffer(state, cfg.lag)
    monitors = []
    for n in range(N):
        t_new = times[n + 1]
        lagged = retard(buffer, n + 1, cfg.lag)
        u, p, xi, info_u = st.step_velocity(state, lagged.theta, t_new)
        theta, xi1, info_t = st.step_temperature(state, lagged.u, lagged.theta, t_new)
        rec = _energy_monitor(n + 1, t_new, st, est, state, u, theta, xi, xi1, info_u, info_t,
                              lagged.theta, lagged.u)
        monitors.append(rec)
        state = FieldState(t_new, u, p, theta, xi, xi1)
        buffer.push(n + 1, state)
        U[n + 1], Pm[n + 1], TH[n + 1], XI[n + 1], XI1[n + 1] = u, p, theta, xi, xi1
        if callback is not None:
            callback(n + 1, state, rec)
    return Trajectory(times, U, Pm, TH, XI, XI1, monitors, est, cfg, spaces)
