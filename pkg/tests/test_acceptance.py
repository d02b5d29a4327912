"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
"""
import math
import sys
import time

import numpy as np
import pytest

from oracles import Oracle, boundary_residual, relative_error
from hvboussinesq.config import parse_config, scenario
from hvboussinesq.forms import assemble_a0, assemble_b0, assemble_c, assemble_G, boundary_nonsmooth_residual
from hvboussinesq.harness import (
    _run_quiet, convergence_study, energy_report, identity_tests, level_configs,
    manufactured_solution_error, temporal_error_study,
)
from hvboussinesq.integrator import setup
from hvboussinesq.io import write_monitors
from hvboussinesq.laws import (
    LawConstants, abs_law, catalog, check_H0, clarke_bounds, conductivity, estimate_constants,
    eval_clarke, mollify, quadratic_law, stick_slip_law,
)
from hvboussinesq.mesh import build_rect_mesh
from hvboussinesq.spaces import TraceNorms, build_spaces

RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line, flush=True)
    assert ok, line


# --- 1: skew identities ---------------------------------------------------------

def test_criterion_01_skew_identities():
    t0 = time.perf_counter()
    worst_skew, weakest_plain, ok = 0.0, math.inf, True
    for n in (4, 8, 16):
        _, spaces, ops = setup(parse_config({"mesh": {"nx": n, "ny": n}}))
        rep = identity_tests(spaces, ops, trials=100, seed=n)
        ok &= bool(rep.passed)
        worst_skew = max(worst_skew, rep.antisymmetry, rep.a1_diagonal, rep.b1_diagonal, rep.reduced_diagonal)
        weakest_plain = min(weakest_plain, rep.plain_a1_diagonal, rep.plain_b1_diagonal)
    dt = time.perf_counter() - t0
    ok = ok and worst_skew <= 1e-11 and weakest_plain > 1e-11 and dt < 10
    report(1, ok, f"meshes 4/8/16, 100 trials: worst skew residual {worst_skew:.2e} (tol 1e-11), "
                  f"plain-form control {weakest_plain:.2e}, {dt:.1f} s (limit 10 s)")


# --- 2: assembly against double-resolution quadrature ----------------------------------

def test_criterion_02_assembly_oracle():
    t0 = time.perf_counter()
    spaces = build_spaces(build_rect_mesh(4, 4, ["bottom"]))
    orc = Oracle(spaces)
    rng = np.random.default_rng(2)
    k = conductivity("sine", a=1.5, b=0.5, c=1.0)
    mu = spaces.interpolate_scalar(lambda x, y: np.sin(2 * x) * np.cos(3 * y) + x * y)
    lag = rng.standard_normal(spaces.n_p1)
    law = mollify(quadratic_law(), 8)
    u = spaces.velocity_full(rng.standard_normal(spaces.n_u)).ravel()
    th = spaces.temperature_full(rng.standard_normal(spaces.n_theta))
    errs = {
        "A0": relative_error(assemble_a0(spaces, 1.0).toarray(), orc.korn(1.0)),
        "B0(mu)": relative_error(assemble_b0(spaces, k, mu).toarray(), orc.conduction(k, mu)),
        "C": relative_error(assemble_c(spaces).toarray(), orc.divergence()),
        "G(lag)": relative_error(assemble_G(spaces, lag).toarray(), orc.plaplace(lag)),
        "boundary(u)": relative_error(
            boundary_nonsmooth_residual(spaces, law, spaces.boundary.trace_tau @ u, "velocity")[0],
            boundary_residual(spaces, lambda s: s, u, "velocity")),
        "boundary(theta)": relative_error(
            boundary_nonsmooth_residual(spaces, law, spaces.boundary.trace_theta @ th, "temperature")[0],
            boundary_residual(spaces, lambda s: s, th, "temperature")),
    }
    dt = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = max(errs.values()) <= 1e-8 and dt < 30
    report(2, ok, f"4x4 mesh, worst relative error {errs[worst]:.2e} ({worst}; tol 1e-8), {dt:.1f} s (limit 30 s)")


# --- 3: nonsmooth laws ------------------------------------------------------------------

def _hull(base, s, r):
    lo = np.full(s.shape, np.inf)
    hi = np.full(s.shape, -np.inf)
    for off in np.linspace(-r, r, 21):
        a, b = clarke_bounds(base, s + off)
        lo, hi = np.minimum(lo, a), np.maximum(hi, b)
    for bp in base.breakpoints:
        inside = np.abs(s - bp) <= r
        a, b = clarke_bounds(base, np.array([bp]))
        lo[inside] = np.minimum(lo[inside], a[0])
        hi[inside] = np.maximum(hi[inside], b[0])
    return lo, hi


def test_criterion_03_nonsmooth_laws():
    t0 = time.perf_counter()
    ok = eval_clarke(abs_law(), 0.0) == (-1.0, 1.0)
    lo, hi = eval_clarke(stick_slip_law(0.3, 0.2, 0.05), 0.05)
    ok &= math.isclose(lo, 0.2) and math.isclose(hi, 0.3)
    rng = np.random.default_rng(3)
    s = rng.uniform(-3, 3, 10_000)
    problems = []
    for name, base in catalog().items():
        c0 = estimate_constants(base, 10.0).growth
        for m in (4, 16):
            law = mollify(base, m)
            d = law.derivative(s)
            lo, hi = _hull(base, s, 1.0 / m)
            if np.any(d < lo - 1e-10) or np.any(d > hi + 1e-10):
                problems.append(f"{name} m={m} support")
            if not np.allclose(law.derivative(-s), -d, atol=1e-12):
                problems.append(f"{name} m={m} symmetry")
            if np.any(np.abs(d) > c0 * (1 + np.abs(s) + 1.0 / m) + 1e-12):
                problems.append(f"{name} m={m} growth")
        # smooth region: farther than 1/2 from every breakpoint, so every window below stays smooth
        far = np.all(np.abs(s[:, None] - np.asarray(base.breakpoints + tuple(-b for b in base.breakpoints))[None, :])
                     > 0.5, axis=1) if base.breakpoints else np.ones(s.shape, bool)
        exact = base.derivative(s[far])
        dev = [float(np.max(np.abs(mollify(base, m).derivative(s[far]) - exact), initial=0.0))
               for m in (2, 4, 8, 16, 32)]
        if any(b > max(a, 1e-10) or (a > 1e-10 and not b < a) for a, b in zip(dev, dev[1:])):
            problems.append(f"{name} deviation {dev}")
    dt = time.perf_counter() - t0
    ok = bool(ok) and not problems and dt < 10
    report(3, ok, f"Clarke catalog cases, {len(catalog())} laws x 10^4 samples, m-doubling monotone"
                  f"{'' if not problems else ' - ' + '; '.join(problems)}, {dt:.1f} s (limit 10 s)")


# --- 4: H0 arithmetic -----------------------------------------------------------------------

def test_criterion_04_h0_examples():
    t0 = time.perf_counter()
    lc = lambda g: LawConstants(g, 0.0, 10.0, 2001)  # noqa: E731
    norms = TraceNorms(1.0, 1.0)
    k10 = conductivity("constant", value=10.0)
    a = check_H0(lc(1.0), lc(0.0), 10.0, k10, norms)
    b = check_H0(lc(0.0), lc(1.0), 10.0, conductivity("constant", value=0.1), norms)
    c = check_H0(lc(1.0), lc(0.0), 2 * math.sqrt(2.0), k10, norms)
    dt = time.perf_counter() - t0
    ok = (a.passed and a.velocity_margin == 10 - 2 * math.sqrt(2.0) and not b.passed
          and not c.passed and c.velocity_margin == 0.0 and dt < 1)
    report(4, ok, f"margin {a.velocity_margin!r} == 10 - 2*sqrt(2); 0.1 < 2*sqrt(2) fails; "
                  f"equality fails with margin {c.velocity_margin}; {dt * 1e3:.1f} ms")


# --- 5, 6, 7, 9, 10: the heated-cavity dt sweep ------------------------------------------------

@pytest.fixture(scope="module")
def sweep():
    cfg = scenario("heated-cavity-slip")
    t0 = time.perf_counter()
    trajs = [_run_quiet(c) for c in level_configs(cfg, "dt", 4)]
    elapsed = time.perf_counter() - t0
    return cfg, trajs, convergence_study(cfg, "dt", 4, trajectories=trajs), elapsed


def test_criterion_05_energy_inequality(sweep):
    cfg, trajs, res, elapsed = sweep
    verdicts = [energy_report(t) for t in trajs]
    worst = min(v.worst_relative_slack for v in verdicts)
    h0 = all(t.estimates.h0.passed for t in trajs)
    ok = h0 and all(v.passed for v in verdicts) and res.energy_spread <= 2.0 and elapsed < 300
    report(5, ok, f"H0 {'holds' if h0 else 'violated'}, worst relative slack {worst:.3e} (tol -1e-9) over "
                  f"dt = T/64..T/512, energy total spread {res.energy_spread:.3f} (limit 2), "
                  f"sweep {elapsed:.0f} s (limit 300 s)")


def _monotone_final(d, ratios):
    return all(b < a for a, b in zip(d, d[1:])) and ratios[-1] <= 0.75


def test_criterion_06_retardation_convergence(sweep):
    _, _, res, _ = sweep
    ok = _monotone_final(res.diff_u, res.ratios_u) and _monotone_final(res.diff_theta, res.ratios_theta)
    fr = lambda r: ", ".join(f"{x:.3f}" for x in r)  # noqa: E731
    report(6, ok, f"consecutive-level differences decrease; ratios u [{fr(res.ratios_u)}], "
                  f"theta [{fr(res.ratios_theta)}] (final <= 0.75)")


def test_criterion_07_regularizer_vanishes(sweep):
    _, _, res, _ = sweep
    r = res.regularizer_ratios
    d = res.regularizer_totals
    ok = _monotone_final(d, r)
    report(7, ok, f"dt*sum h*theta'G theta = [{', '.join(f'{x:.3e}' for x in d)}], "
                  f"ratios [{', '.join(f'{x:.3f}' for x in r)}] (final <= 0.75)")


def test_criterion_09_multiplier_bounds(sweep):
    _, trajs, _, _ = sweep
    rx = max(m.xi_bound_ratio for t in trajs for m in t.monitors)
    rx1 = max(m.xi1_bound_ratio for t in trajs for m in t.monitors)
    ok = rx <= 1 + 1e-12 and rx1 <= 1 + 1e-12
    report(9, ok, f"max |xi|/bound {rx:.4f}, max |xi1|/bound {rx1:.4f} over all Gamma_1 points, "
                  f"steps and levels (limit 1)")


def test_criterion_10_determinism(sweep, tmp_path):
    cfg, trajs, _, _ = sweep
    again = _run_quiet(cfg)
    a = write_monitors(trajs[0].monitors, tmp_path / "a.csv").read_bytes()
    b = write_monitors(again.monitors, tmp_path / "b.csv").read_bytes()
    ok = a == b and len(a) > 0
    report(10, ok, f"two runs of heated-cavity-slip at dt = T/64: monitor CSVs "
                   f"{'bit-identical' if ok else 'differ'} ({len(a)} bytes)")


# --- 8: manufactured solution --------------------------------------------------------------------

def test_criterion_08_manufactured():
    t0 = time.perf_counter()
    cfg = scenario("manufactured", **{"mesh.nx": 8, "mesh.ny": 8})
    space = manufactured_solution_error(cfg, 3, "mesh", keep=True)
    finest = space.trajectories[-1]
    fine_cfg = finest.cfg
    temporal = temporal_error_study(fine_cfg, steps=(32, 64, 128, 256), reference=finest)
    dt = time.perf_counter() - t0
    so = space.orders_u + space.orders_theta
    tr = temporal.ratios_u + temporal.ratios_theta
    ok = min(so) >= 1.8 and all(1.7 <= r <= 2.4 for r in tr) and dt < 600
    f = lambda r: ", ".join(f"{x:.2f}" for x in r)  # noqa: E731
    report(8, ok, f"spatial orders (8/16/32, dt = T/2048) u [{f(space.orders_u)}], theta [{f(space.orders_theta)}] "
                  f"(>= 1.8); temporal error ratio per halving at {fine_cfg.nx}x{fine_cfg.ny}, N = 32..256 "
                  f"vs N = 2048: u [{f(temporal.ratios_u)}], theta [{f(temporal.ratios_theta)}] "
                  f"(in [1.7, 2.4]; observed order theta [{f(temporal.orders_theta)}]); {dt:.0f} s (limit 600 s)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
