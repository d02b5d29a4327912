import copy
import dataclasses
import math

import numpy as np
import pytest

from hvboussinesq.config import parse_config, scenario
from hvboussinesq.harness import (
    convergence_study, energy_report, evaluate_scalar, evaluate_velocity, identity_tests, inject,
    level_configs, locate, manufactured_solution_error, skew_discrepancy, trajectory_difference,
)
from hvboussinesq.integrator import run, setup
from hvboussinesq.mesh import build_rect_mesh
from hvboussinesq.spaces import build_spaces
from oracles import barycentric_p2


@pytest.fixture(scope="module")
def spaces4():
    cfg = parse_config({"mesh": {"nx": 4, "ny": 4}})
    _, spaces, ops = setup(cfg)
    return spaces, ops


def test_identities_hold_and_plain_form_does_not(spaces4):
    spaces, ops = spaces4
    rep = identity_tests(spaces, ops, trials=20, seed=3)
    assert rep.passed
    assert max(rep.antisymmetry, rep.a1_diagonal, rep.b1_diagonal, rep.reduced_diagonal) < 1e-13
    assert rep.plain_a1_diagonal > 1e-3 and rep.plain_b1_diagonal > 1e-3


def test_plain_form_discrepancy_shrinks_with_mesh():
    d = [skew_discrepancy(n) for n in (4, 8, 16)]
    orders = [math.log2(d[i] / d[i + 1]) for i in range(2)]
    assert min(orders) >= 1.0


def test_locate_and_evaluate_against_barycentric_formula(spaces4):
    spaces, _ = spaces4
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, size=(50, 2))
    tri, _ = locate(spaces, pts)
    u_full = rng.standard_normal(spaces.n_vel)
    got = evaluate_velocity(spaces, u_full, pts)
    th_full = rng.standard_normal(spaces.mesh.n_vertices)
    got_t = evaluate_scalar(spaces, th_full, pts)
    for k, p in enumerate(pts):
        verts = spaces.mesh.vertices[spaces.mesh.triangles[tri[k]]]
        phi = barycentric_p2(verts, p)
        ref = phi @ u_full.reshape(-1, 2)[spaces.p2_cells[tri[k]]]
        assert np.allclose(got[k], ref, atol=1e-13)
        lam = phi[:3] + 0.5 * (phi[[3, 4, 5]] + phi[[5, 3, 4]])   # P1 hats from P2 basis
        assert np.isclose(got_t[k], lam @ th_full[spaces.mesh.triangles[tri[k]]], atol=1e-13)
    with pytest.raises(ValueError):
        locate(spaces, np.array([[1.5, 0.5]]))


def test_inject_is_exact_for_nested_spaces():
    coarse = build_spaces(build_rect_mesh(2, 2, ["bottom"]))
    fine = build_spaces(build_rect_mesh(4, 4, ["bottom"]))
    rng = np.random.default_rng(1)
    uc, tc = rng.standard_normal(coarse.n_u), rng.standard_normal(coarse.n_theta)
    uf, tf = inject(coarse, fine, uc, tc)
    pts = rng.uniform(0, 1, size=(40, 2))
    assert np.allclose(evaluate_velocity(fine, fine.P_u @ uf, pts),
                       evaluate_velocity(coarse, coarse.P_u @ uc, pts), atol=1e-12)
    assert np.allclose(evaluate_scalar(fine, fine.P_theta @ tf, pts),
                       evaluate_scalar(coarse, coarse.P_theta @ tc, pts), atol=1e-12)


def test_zero_run_has_nonnegative_slack():
    tr = run(parse_config({"mesh": {"nx": 4, "ny": 4}, "time": {"T": 0.03, "dt": 0.01}}))
    v = energy_report(tr)
    assert v.passed and v.label == "pass" and v.energy_total == 0


def test_label_distinguishes_h0_violation():
    cfg = scenario("stokes-check", **{"time.T": 0.02})
    tr = run(cfg)
    bad = copy.copy(tr)
    bad.monitors = [dataclasses.replace(m, slack_u=-1.0) for m in tr.monitors]
    assert energy_report(bad).label == "fail"
    h0 = dataclasses.replace(tr.estimates.h0, velocity_ok=False, velocity_margin=-1.0)
    bad.estimates = dataclasses.replace(tr.estimates, h0=h0)
    assert not bad.estimates.h0.passed
    assert energy_report(bad).label == "H0 violated"


def test_level_configs():
    cfg = scenario("heated-cavity-slip")
    assert [c.dt for c in level_configs(cfg, "dt", 3)] == [cfg.dt, cfg.dt / 2, cfg.dt / 4]
    assert [c.nx for c in level_configs(cfg, "mesh", 3)] == [16, 32, 64]
    with pytest.raises(ValueError):
        level_configs(cfg, "dt", 2)
    with pytest.raises(ValueError):
        level_configs(cfg, "lag", 3)


def test_m_study_at_floor_for_linear_law():
    # a linear derivative is reproduced exactly by any symmetric mollifier
    raw = {"mesh": {"nx": 4, "ny": 4}, "physics": {"buoyancy": {"beta": 10.0}},
           "laws": {"friction": {"preset": "quadratic", "scale": 0.1}},
           "initial": {"theta0": {"kind": "sine", "amplitude": 1.0}}, "time": {"T": 0.03, "dt": 0.01}}
    res = convergence_study(parse_config(raw), "m", 3)
    assert res.at_floor and res.passed


def test_dt_study_on_coarse_cavity():
    cfg = scenario("heated-cavity-slip", **{"mesh.nx": 4, "mesh.ny": 4, "time.T": 0.125})
    res = convergence_study(cfg, "dt", 3)
    assert all(v == "pass" for v in res.energy_verdicts)
    assert res.diff_u[1] < res.diff_u[0] and res.diff_theta[1] < res.diff_theta[0]
    assert len(res.rows()) == 3


def test_trajectory_difference_rejects_non_nested_grids():
    a = run(scenario("stokes-check", **{"time.T": 0.03, "time.dt": 0.01}))
    b = run(scenario("stokes-check", **{"time.T": 0.03, "time.dt": 0.0075}))
    with pytest.raises(ValueError):
        trajectory_difference(a, b)
    assert trajectory_difference(a, a) == (0.0, 0.0)


def test_manufactured_requires_smooth_setup():
    with pytest.raises(ValueError):
        manufactured_solution_error(scenario("heated-cavity-slip"), 3)


@pytest.mark.slow
def test_manufactured_mesh_rates_coarse():
    cfg = scenario("manufactured", **{"mesh.nx": 4, "mesh.ny": 4, "time.T": 0.01, "time.dt": 0.01 / 64})
    tab = manufactured_solution_error(cfg, 3, "mesh")
    assert min(tab.orders_u) > 2.5 and min(tab.orders_theta) > 1.6
