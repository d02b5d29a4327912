"""Executable versions of the analytic estimates: identity checks, energy
verdicts, refinement studies and manufactured-solution error tables."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .fem import p1_basis, p2_basis
from .forms import assemble_a1, assemble_b1, scalar_at_quadrature, velocity_at_quadrature
from .integrator import Trajectory, run
from .spaces import DiscreteSpaces, build_spaces, scalar_mass, velocity_mass
from .mesh import build_rect_mesh

IDENTITY_TOL = 1e-11
SLACK_TOL = 1e-9
STUDY_RATIO = 0.75


class StudyError(RuntimeError):
    pass


# --- point evaluation on structured meshes --------------------------------------

def locate(spaces: DiscreteSpaces, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Triangle index and reference coordinates for each point (structured mesh)."""
    mesh = spaces.mesh
    x0, x1, y0, y1 = mesh.domain
    nx, ny = mesh.nx, mesh.ny
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    i = np.clip(np.floor((pts[:, 0] - x0) / (x1 - x0) * nx).astype(int), 0, nx - 1)
    j = np.clip(np.floor((pts[:, 1] - y0) / (y1 - y0) * ny).astype(int), 0, ny - 1)
    cell = j * nx + i
    best_t = np.empty(len(pts), dtype=np.int64)
    best_ref = np.empty((len(pts), 2))
    best_min = np.full(len(pts), -np.inf)
    for k in (0, 1):
        t = 2 * cell + k
        v = mesh.vertices[mesh.triangles[t]]
        e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
        d = pts - v[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        xi = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        eta = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        mn = np.minimum(np.minimum(xi, eta), 1 - xi - eta)
        take = mn > best_min
        best_t[take] = t[take]
        best_ref[take] = np.column_stack([xi, eta])[take]
        best_min[take] = mn[take]
    if np.any(best_min < -1e-9):
        raise ValueError("point outside the mesh")
    return best_t, best_ref


def evaluate_scalar(spaces: DiscreteSpaces, theta_full: np.ndarray, pts: np.ndarray) -> np.ndarray:
    t, ref = locate(spaces, pts)
    vals, _ = p1_basis(ref)
    return np.sum(vals * theta_full[spaces.mesh.triangles[t]], axis=1)


def evaluate_velocity(spaces: DiscreteSpaces, u_full: np.ndarray, pts: np.ndarray) -> np.ndarray:
    t, ref = locate(spaces, pts)
    vals, _ = p2_basis(ref)
    nodal = u_full.reshape(-1, 2)[spaces.p2_cells[t]]
    return np.einsum("pa,pai->pi", vals, nodal)


def inject(coarse: DiscreteSpaces, fine: DiscreteSpaces, u_free: np.ndarray, theta_free: np.ndarray):
    """Exact representation of coarse fields in a nested fine space (free coefficients)."""
    u = evaluate_velocity(coarse, coarse.P_u @ u_free, fine.p2_nodes).ravel()
    th = evaluate_scalar(coarse, coarse.P_theta @ theta_free, fine.mesh.vertices)
    return fine.restrict_velocity(u), fine.restrict_temperature(th)


def free_masses(spaces: DiscreteSpaces):
    Pu, Pt = spaces.P_u, spaces.P_theta
    return (Pu.T @ velocity_mass(spaces) @ Pu).tocsr(), (Pt.T @ scalar_mass(spaces) @ Pt).tocsr()


# --- skew identities -----------------------------------------------------------

@dataclass
class IdentityReport:
    trials: int
    antisymmetry: float         # max |a~1(w,v,z) + a~1(w,z,v)| relative
    a1_diagonal: float          # max |a~1(w,z,z)| relative
    b1_diagonal: float          # max |b~1(w,eta,eta)| relative
    reduced_diagonal: float     # same cancellation on constrained operators
    plain_a1_diagonal: float    # negative control: non-skew form
    plain_b1_diagonal: float
    tol: float = IDENTITY_TOL

    @property
    def passed(self) -> bool:
        skew = max(self.antisymmetry, self.a1_diagonal, self.b1_diagonal, self.reduced_diagonal)
        return skew <= self.tol and self.plain_a1_diagonal > self.tol

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def _rel(value, scale):
    return abs(value) / scale if scale > 0 else abs(value)


def identity_tests(spaces: DiscreteSpaces, ops=None, trials: int = 100, seed: int = 0) -> IdentityReport:
    """Random-vector check of the skew cancellations; ``w`` is deliberately not divergence free."""
    rng = np.random.default_rng(seed)
    worst = dict(anti=0.0, a1=0.0, b1=0.0, red=0.0, pa1=0.0, pb1=0.0)
    for _ in range(trials):
        w = rng.standard_normal(spaces.n_vel)
        v, z = rng.standard_normal(spaces.n_vel), rng.standard_normal(spaces.n_vel)
        plain = assemble_a1(spaces, w, skew=False)
        skew = assemble_a1(spaces, w, skew=True)
        ab = abs(plain)
        s_vz = float(np.abs(z) @ (ab @ np.abs(v)))
        s_zz = float(np.abs(z) @ (ab @ np.abs(z)))
        worst["anti"] = max(worst["anti"], _rel(z @ (skew @ v) + v @ (skew @ z), s_vz))
        worst["a1"] = max(worst["a1"], _rel(z @ (skew @ z), s_zz))
        worst["pa1"] = max(worst["pa1"], _rel(z @ (plain @ z), s_zz))

        eta = rng.standard_normal(spaces.n_p1)
        bp = assemble_b1(spaces, w, skew=False)
        bs = assemble_b1(spaces, w, skew=True)
        s_ee = float(np.abs(eta) @ (abs(bp) @ np.abs(eta)))
        worst["b1"] = max(worst["b1"], _rel(eta @ (bs @ eta), s_ee))
        worst["pb1"] = max(worst["pb1"], _rel(eta @ (bp @ eta), s_ee))

        if ops is not None:
            uf = rng.standard_normal(spaces.n_u)
            zf = rng.standard_normal(spaces.n_u)
            n = ops.convection(uf)
            scale = float(np.abs(zf) @ (abs(n) @ np.abs(zf)))
            worst["red"] = max(worst["red"], _rel(zf @ (n @ zf), scale))
    return IdentityReport(trials, worst["anti"], worst["a1"], worst["b1"], worst["red"],
                          worst["pa1"], worst["pb1"])


def skew_discrepancy(n: int, amplitude: float = 1.0) -> float:
    """|a1(w, z, z)| for interpolated divergence-free w; the skew form gives zero exactly."""
    spaces = build_spaces(build_rect_mesh(n, n))

    def vortex(x, y):
        sx, sy = np.sin(np.pi * x), np.sin(np.pi * y)
        return (amplitude * sx ** 2 * 2 * sy * np.cos(np.pi * y) * np.pi,
                -amplitude * 2 * sx * np.cos(np.pi * x) * np.pi * sy ** 2)

    w = spaces.interpolate_velocity(vortex)
    z = spaces.interpolate_velocity(lambda x, y: (np.exp(x) * (1 + y * y), np.cos(2 * x + y) + x))
    return abs(float(z @ (assemble_a1(spaces, w, skew=False) @ z)))


# --- energy ---------------------------------------------------------------------

@dataclass
class EnergyVerdict:
    passed: bool
    label: str                  # "pass", "fail" or "H0 violated"
    worst_step: int
    worst_relative_slack: float
    energy_total: float
    regularizer_total: float
    multiplier_total: float
    flux_multiplier_total: float
    max_divergence: float
    max_xi_ratio: float
    max_xi1_ratio: float
    h0_passed: bool
    monitors: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "monitors"}
        return d


def energy_total(traj: Trajectory) -> float:
    """sup_n (K_u + K_theta) + sum dt (|u|_E^2 + |grad theta|^2 + h theta G theta)."""
    sp_ = traj.spaces
    Mu, Mt = free_masses(sp_)
    k0 = 0.5 * float(traj.u[0] @ (Mu @ traj.u[0])) + 0.5 * float(traj.theta[0] @ (Mt @ traj.theta[0]))
    dt = traj.cfg.dt
    peak = max([k0] + [m.kinetic + m.thermal for m in traj.monitors])
    integral = sum(dt * (m.energy_norm_u + m.grad_theta_sq) + m.regularizer_increment for m in traj.monitors)
    return peak + integral


def energy_report(traj: Trajectory, tol: float = SLACK_TOL) -> EnergyVerdict:
    ms = traj.monitors
    h0 = traj.estimates.h0.passed if traj.estimates is not None else True
    if ms:
        rel = [m.relative_slack for m in ms]
        k = int(np.argmin(rel))
        worst, worst_step = rel[k], ms[k].step
    else:
        worst, worst_step = 0.0, 0
    ok = worst >= -tol
    label = "pass" if ok else ("fail" if h0 else "H0 violated")
    dt = traj.cfg.dt
    return EnergyVerdict(
        passed=ok, label=label, worst_step=worst_step, worst_relative_slack=worst,
        energy_total=energy_total(traj),
        regularizer_total=sum(m.regularizer_increment for m in ms),
        multiplier_total=sum(dt * m.xi_l2sq for m in ms),
        flux_multiplier_total=sum(dt * m.xi1_l2sq for m in ms),
        max_divergence=max((m.divergence_residual for m in ms), default=0.0),
        max_xi_ratio=max((m.xi_bound_ratio for m in ms), default=0.0),
        max_xi1_ratio=max((m.xi1_bound_ratio for m in ms), default=0.0),
        h0_passed=h0, monitors=ms,
    )


# --- refinement studies ------------------------------------------------------------

def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _run_quiet(cfg: SimConfig) -> Trajectory:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=UserWarning)
        return run(cfg)


def level_configs(cfg: SimConfig, knob: str, levels: int) -> list[SimConfig]:
    if levels < 3:
        raise ValueError("a refinement study needs at least 3 levels")
    out = []
    for i in range(levels):
        f = 2 ** i
        if knob == "dt":
            out.append(cfg.with_updates(**{"time.dt": cfg.dt / f}))
        elif knob == "m":
            out.append(cfg.with_updates(**{"laws.mollification_m": cfg.mollification_m * f}))
        elif knob == "mesh":
            out.append(cfg.with_updates(**{"mesh.nx": cfg.nx * f, "mesh.ny": cfg.ny * f}))
        else:
            raise ValueError(f"unknown refinement knob {knob!r}; choose dt, m or mesh")
    return out


def _time_l2(diffs_u, diffs_t, Mu, Mt, dt):
    su = sum(float(d @ (Mu @ d)) for d in diffs_u)
    st = sum(float(d @ (Mt @ d)) for d in diffs_t)
    return math.sqrt(dt * su), math.sqrt(dt * st)


def trajectory_difference(coarse: Trajectory, fine: Trajectory) -> tuple[float, float]:
    """Discrete L2(0,T;L2) differences on the coarse time grid.

    Fine trajectories are sampled at coarse times (nested grids make the
    linear interpolant exact there); coarse fields are injected into the
    fine space when meshes differ.
    """
    dtc = coarse.cfg.dt
    ratio = round(dtc / fine.cfg.dt)
    if abs(ratio * fine.cfg.dt - dtc) > 1e-12 * dtc:
        raise ValueError("time grids are not nested")
    same_mesh = coarse.spaces.mesh.descriptor() == fine.spaces.mesh.descriptor()
    Mu, Mt = free_masses(fine.spaces)
    du, dth = [], []
    for k in range(1, len(coarse.times)):
        uc, tc = coarse.u[k], coarse.theta[k]
        if not same_mesh:
            uc, tc = inject(coarse.spaces, fine.spaces, uc, tc)
        du.append(fine.u[k * ratio] - uc)
        dth.append(fine.theta[k * ratio] - tc)
    return _time_l2(du, dth, Mu, Mt, dtc)


def trajectory_norm(traj: Trajectory) -> tuple[float, float]:
    Mu, Mt = free_masses(traj.spaces)
    return _time_l2(traj.u[1:], traj.theta[1:], Mu, Mt, traj.cfg.dt)


def _ratios(d):
    return [d[i + 1] / d[i] if d[i] > 0 else math.inf for i in range(len(d) - 1)]


def _decreasing(d, floor):
    return all(d[i + 1] < d[i] or d[i + 1] <= floor for i in range(len(d) - 1))


@dataclass
class StudyResult:
    knob: str
    values: list
    norms_u: list
    norms_theta: list
    diff_u: list
    diff_theta: list
    energy_totals: list
    regularizer_totals: list
    multiplier_totals: list
    energy_verdicts: list
    floor: float
    ratio_threshold: float = STUDY_RATIO

    @property
    def ratios_u(self):
        return _ratios(self.diff_u)

    @property
    def ratios_theta(self):
        return _ratios(self.diff_theta)

    @property
    def orders_u(self):
        return [-math.log2(r) if 0 < r < math.inf else math.nan for r in self.ratios_u]

    @property
    def orders_theta(self):
        return [-math.log2(r) if 0 < r < math.inf else math.nan for r in self.ratios_theta]

    @property
    def at_floor(self) -> bool:
        return max(self.diff_u + self.diff_theta) <= self.floor

    @property
    def passed(self) -> bool:
        if self.at_floor:
            return True
        ok = True
        for d, r in ((self.diff_u, self.ratios_u), (self.diff_theta, self.ratios_theta)):
            if max(d) <= self.floor:
                continue
            ok &= _decreasing(d, self.floor) and (r[-1] <= self.ratio_threshold or d[-1] <= self.floor)
        return bool(ok)

    @property
    def regularizer_ratios(self):
        return _ratios(self.regularizer_totals)

    @property
    def energy_spread(self) -> float:
        e = [x for x in self.energy_totals if x > 0]
        return max(e) / min(e) if e else 1.0

    @property
    def multiplier_spread(self) -> float:
        m = self.multiplier_totals
        r = [max(m[i], m[i + 1]) / min(m[i], m[i + 1]) for i in range(len(m) - 1) if min(m[i], m[i + 1]) > 0]
        return max(r, default=1.0)

    def rows(self) -> list[dict]:
        out = []
        for i, v in enumerate(self.values):
            out.append({
                "level": i, self.knob: v,
                "norm_u": self.norms_u[i], "norm_theta": self.norms_theta[i],
                "diff_u": self.diff_u[i - 1] if i else "",
                "diff_theta": self.diff_theta[i - 1] if i else "",
                "ratio_u": self.ratios_u[i - 2] if i > 1 else "",
                "ratio_theta": self.ratios_theta[i - 2] if i > 1 else "",
                "energy_total": self.energy_totals[i],
                "regularizer_total": self.regularizer_totals[i],
                "multiplier_total": self.multiplier_totals[i],
                "energy_verdict": self.energy_verdicts[i],
            })
        return out


def convergence_study(cfg: SimConfig, knob: str = "dt", levels: int = 3, threads: int = 1,
                      trajectories: list | None = None) -> StudyResult:
    """Cauchy study over nested refinements of one knob."""
    cfgs = level_configs(cfg, knob, levels)
    trajs = trajectories if trajectories is not None else _map(_run_quiet, cfgs, threads)
    values = {"dt": [c.dt for c in cfgs], "m": [c.mollification_m for c in cfgs],
              "mesh": [c.nx for c in cfgs]}[knob]
    norms = [trajectory_norm(t) for t in trajs]
    diffs = [trajectory_difference(trajs[i], trajs[i + 1]) for i in range(levels - 1)]
    verdicts = [energy_report(t) for t in trajs]
    scale = max(max(n) for n in norms)
    return StudyResult(
        knob=knob, values=values,
        norms_u=[n[0] for n in norms], norms_theta=[n[1] for n in norms],
        diff_u=[d[0] for d in diffs], diff_theta=[d[1] for d in diffs],
        energy_totals=[v.energy_total for v in verdicts],
        regularizer_totals=[v.regularizer_total for v in verdicts],
        multiplier_totals=[v.multiplier_total for v in verdicts],
        energy_verdicts=[v.label for v in verdicts],
        floor=max(1e3 * cfg.picard_tol, 1e-9) * max(scale, 1.0),
    )


# --- manufactured solutions -----------------------------------------------------------

def _require_smooth_setup(cfg: SimConfig):
    if cfg.gamma1_sides:
        raise ValueError("manufactured solutions need an empty Gamma_1 (all-Dirichlet boundary)")
    if not (cfg.friction.is_zero() and cfg.heat_flux.is_zero()):
        raise ValueError("manufactured solutions need zero boundary laws")
    for name in ("source_g", "body_force", "u0", "theta0"):
        if getattr(cfg, name).kind != "manufactured":
            raise ValueError(f"{name} must be of kind 'manufactured'")


def field_errors(traj: Trajectory, step: int = -1) -> dict:
    """L2 errors of u, theta and p against the exact fields at one step."""
    from .manufactured import fields_for

    sp_ = traj.spaces
    ex = fields_for(traj.cfg)
    t = float(traj.times[step])
    pts = sp_.elements.points
    x, y = pts[..., 0], pts[..., 1]
    w = sp_.elements.weights
    uq = velocity_at_quadrature(sp_, sp_.P_u @ traj.u[step])
    ux, uy = ex["u"](x, y, t)
    tq = scalar_at_quadrature(sp_, sp_.P_theta @ traj.theta[step])
    pq = scalar_at_quadrature(sp_, traj.p[step])
    return {
        "t": t,
        "err_u": math.sqrt(float(np.sum(w * ((uq[..., 0] - ux) ** 2 + (uq[..., 1] - uy) ** 2)))),
        "err_theta": math.sqrt(float(np.sum(w * (tq - ex["theta"](x, y, t)) ** 2))),
        "err_p": math.sqrt(float(np.sum(w * (pq - ex["p"](x, y, t)) ** 2))),
    }


@dataclass
class ErrorTable:
    knob: str
    rows: list
    trajectories: list = field(default_factory=list, repr=False)

    def _orders(self, key):
        e = [r[key] for r in self.rows]
        return [math.log2(e[i] / e[i + 1]) if e[i + 1] > 0 else math.inf for i in range(len(e) - 1)]

    def _ratios(self, key):
        e = [r[key] for r in self.rows]
        return [e[i] / e[i + 1] if e[i + 1] > 0 else math.inf for i in range(len(e) - 1)]

    @property
    def orders_u(self):
        return self._orders("err_u")

    @property
    def orders_theta(self):
        return self._orders("err_theta")

    @property
    def ratios_u(self):
        return self._ratios("err_u")

    @property
    def ratios_theta(self):
        return self._ratios("err_theta")


def manufactured_solution_error(cfg: SimConfig, levels: int = 3, knob: str = "mesh",
                                threads: int = 1, keep: bool = False) -> ErrorTable:
    """Final-time errors over nested mesh (or time-step) refinements."""
    _require_smooth_setup(cfg)
    if knob not in ("mesh", "dt"):
        raise ValueError("manufactured refinement knob must be mesh or dt")
    cfgs = [cfg] + level_configs(cfg, knob, max(levels, 3))[1:levels] if levels >= 1 else []
    trajs = _map(_run_quiet, cfgs, threads)
    rows = []
    for c, tr in zip(cfgs, trajs):
        rows.append({"nx": c.nx, "dt": c.dt, "steps": c.n_steps, **field_errors(tr)})
    return ErrorTable(knob, rows, trajs if keep else [])


def temporal_error_study(cfg: SimConfig, steps=(32, 64, 128, 256), reference: Trajectory | None = None,
                         reference_steps: int = 2048, threads: int = 1) -> ErrorTable:
    """Final-time temporal errors on a fixed mesh.

    The error is measured against a run with ``reference_steps`` steps on the
    same mesh, which removes the spatial error floor; analytic errors are
    reported alongside.
    """
    _require_smooth_setup(cfg)
    if reference is None:
        reference = _run_quiet(cfg.with_updates(**{"time.dt": cfg.T / reference_steps}))
    elif reference.spaces.mesh.descriptor() != build_rect_mesh(cfg.nx, cfg.ny, cfg.gamma1_sides,
                                                                cfg.width, cfg.height).descriptor():
        raise ValueError("reference run uses a different mesh")
    cfgs = [cfg.with_updates(**{"time.dt": cfg.T / n}) for n in steps]
    trajs = _map(_run_quiet, cfgs, threads)
    Mu, Mt = free_masses(reference.spaces)
    rows = []
    for c, tr in zip(cfgs, trajs):
        du = tr.u[-1] - reference.u[-1]
        dth = tr.theta[-1] - reference.theta[-1]
        exact = field_errors(tr)
        rows.append({
            "nx": c.nx, "dt": c.dt, "steps": c.n_steps, "t": exact["t"],
            "err_u": math.sqrt(float(du @ (Mu @ du))),
            "err_theta": math.sqrt(float(dth @ (Mt @ dth))),
            "analytic_err_u": exact["err_u"], "analytic_err_theta": exact["err_theta"],
        })
    return ErrorTable("dt", rows, [reference])
