import numpy as np
import pytest

from oracles import Oracle, boundary_residual, relative_error
from hvboussinesq.forms import (
    assemble_a0, assemble_a1, assemble_b0, assemble_b1, assemble_buoyancy, assemble_c, assemble_G,
    boundary_nonsmooth_residual, build_operators,
)
from hvboussinesq.laws import catalog, conductivity, mollify, quadratic_law, zero_law
from hvboussinesq.mesh import build_rect_mesh
from hvboussinesq.spaces import build_spaces, scalar_stiffness


@pytest.fixture(scope="module")
def s4():
    return build_spaces(build_rect_mesh(4, 4, ["bottom"]))


@pytest.fixture(scope="module")
def oracle4(s4):
    return Oracle(s4)


def vec(s, fx, fy):
    return s.interpolate_velocity(lambda x, y: (fx(x, y), fy(x, y)))


def test_a0_analytic(s4):
    alpha = 0.7
    A = assemble_a0(s4, alpha)
    u = vec(s4, lambda x, y: x, lambda x, y: 0 * x)
    assert u @ (A @ u) == pytest.approx(2 * alpha, rel=1e-13)
    u = vec(s4, lambda x, y: y, lambda x, y: x)
    assert u @ (A @ u) == pytest.approx(4 * alpha, rel=1e-13)
    with pytest.raises(ValueError):
        assemble_a0(s4, 0.0)


def test_a0_positive_and_oracle(s4, oracle4):
    A = assemble_a0(s4, 1.3)
    rng = np.random.default_rng(1)
    ops = build_operators(s4)
    for _ in range(5):
        w = rng.standard_normal(s4.n_u)
        assert w @ (ops.A0(1.3) @ w) > 0
    assert relative_error(A.toarray(), oracle4.korn(1.3)) < 1e-10


def test_a1_analytic(s4):
    w = vec(s4, lambda x, y: 1 + 0 * x, lambda x, y: 0 * x)
    v = vec(s4, lambda x, y: x, lambda x, y: 0 * x)
    z = vec(s4, lambda x, y: 1 + 0 * x, lambda x, y: 0 * x)
    assert z @ (assemble_a1(s4, w, skew=False) @ v) == pytest.approx(1.0, rel=1e-13)
    assert z @ (assemble_a1(s4, w, skew=True) @ v) == pytest.approx(0.5, rel=1e-13)


def test_a1_skew_cancellation(s4):
    rng = np.random.default_rng(2)
    for _ in range(10):
        w, z = rng.standard_normal(s4.n_vel), rng.standard_normal(s4.n_vel)
        N = assemble_a1(s4, w)
        assert abs(z @ (N @ z)) <= 1e-13 * (z @ z)


def test_a1_plain_oracle(s4, oracle4):
    w = np.random.default_rng(3).standard_normal(s4.n_vel)
    assert relative_error(assemble_a1(s4, w, skew=False).toarray(), oracle4.advection(w)) < 1e-10


def test_a1_divergence_free_agreement():
    # exactly divergence-free P2 field: w = curl of a P3 stream function is not P2, so use
    # a rigid rotation about the centre (linear, divergence free) on a closed slip-free box
    s = build_spaces(build_rect_mesh(8, 8))
    w = vec(s, lambda x, y: -(y - 0.5), lambda x, y: x - 0.5)
    bub = lambda x, y: x * (1 - x) * y * (1 - y)
    v = vec(s, lambda x, y: bub(x, y) * np.sin(x), lambda x, y: bub(x, y) * y)
    z = vec(s, lambda x, y: bub(x, y), lambda x, y: bub(x, y) * x)
    plain = z @ (assemble_a1(s, w, skew=False) @ v)
    skew = z @ (assemble_a1(s, w, skew=True) @ v)
    assert skew == pytest.approx(plain, rel=1e-8, abs=1e-14)


def test_b1_analytic_and_skew(s4):
    w = vec(s4, lambda x, y: 1 + 0 * x, lambda x, y: 0 * x)
    eta = s4.mesh.vertices[:, 0].copy()
    zeta = np.ones(s4.n_p1)
    assert zeta @ (assemble_b1(s4, w, skew=False) @ eta) == pytest.approx(1.0, rel=1e-13)
    assert zeta @ (assemble_b1(s4, w, skew=True) @ eta) == pytest.approx(0.5, rel=1e-13)
    rng = np.random.default_rng(4)
    w = rng.standard_normal(s4.n_vel)
    B = assemble_b1(s4, w)
    for _ in range(5):
        z = rng.standard_normal(s4.n_p1)
        assert abs(z @ (B @ z)) <= 1e-13 * (z @ z)


def test_b0_cases(s4, oracle4):
    K = scalar_stiffness(s4).toarray()
    one = conductivity("constant", value=1.0)
    np.testing.assert_allclose(assemble_b0(s4, one, np.zeros(s4.n_p1)).toarray(), K, atol=1e-12)
    k = conductivity("sine", a=2.0, b=1.0, c=1.0)
    np.testing.assert_allclose(assemble_b0(s4, k, np.zeros(s4.n_p1)).toarray(), 2 * K, atol=1e-12)
    kc = conductivity("clipped_poly", coeffs=[1.0, 0.0, 1.0], lo=1.0, hi=3.0, delta=1.0)
    rng = np.random.default_rng(5)
    mu = rng.standard_normal(s4.n_p1)
    B = assemble_b0(s4, kc, mu).toarray()
    np.testing.assert_allclose(B, B.T, atol=1e-14)
    Pt = s4.P_theta.toarray()
    Br, Kr = Pt.T @ B @ Pt, Pt.T @ K @ Pt
    for _ in range(50):
        z = rng.standard_normal(Br.shape[0])
        assert z @ Br @ z >= kc.delta * (z @ Kr @ z) * (1 - 1e-10)
    mu_s = s4.interpolate_scalar(lambda x, y: 0.5 * np.sin(np.pi * x) * np.cos(np.pi * y))
    assert relative_error(assemble_b0(s4, k, mu_s).toarray(), oracle4.conduction(k, mu_s)) < 1e-8


def test_c_cases(s4, oracle4):
    C = assemble_c(s4)
    v = vec(s4, lambda x, y: x, lambda x, y: -y)
    np.testing.assert_allclose(C @ v, 0.0, atol=1e-12)
    v = vec(s4, lambda x, y: x, lambda x, y: 0 * x)
    assert np.ones(s4.n_p1) @ (C @ v) == pytest.approx(-1.0, rel=1e-13)
    v = vec(s4, lambda x, y: 0.3 + 0 * x, lambda x, y: -2.0 + 0 * x)
    np.testing.assert_allclose(C @ v, 0.0, atol=1e-13)
    assert relative_error(C.toarray(), oracle4.divergence()) < 1e-12


def test_G_cases(s4, oracle4):
    np.testing.assert_allclose(assemble_G(s4, np.zeros(s4.n_p1)).toarray(), 0.0)
    x = s4.mesh.vertices[:, 0].copy()
    np.testing.assert_allclose(assemble_G(s4, x).toarray(), scalar_stiffness(s4).toarray(), atol=1e-12)
    rng = np.random.default_rng(6)
    lag = rng.standard_normal(s4.n_p1)
    G = assemble_G(s4, lag)
    ref = oracle4.plaplace(lag)
    z = rng.standard_normal(s4.n_p1)
    assert z @ (G @ z) == pytest.approx(z @ ref @ z, rel=1e-10)


def test_buoyancy_and_masses_oracle(s4, oracle4):
    X, Y = assemble_buoyancy(s4)
    theta = np.random.default_rng(7).standard_normal(s4.n_p1)
    v = np.random.default_rng(8).standard_normal(s4.n_vel)
    M = oracle4.velocity_mass()
    # X theta tested with v equals int theta v_x: compare through the mass matrices
    ex = np.zeros(s4.n_vel)
    ex[0::2] = 1.0
    assert v @ (X @ np.ones(s4.n_p1)) == pytest.approx(v @ (M @ ex), rel=1e-12)
    ey = np.zeros(s4.n_vel)
    ey[1::2] = 1.0
    assert v @ (Y @ np.ones(s4.n_p1)) == pytest.approx(v @ (M @ ey), rel=1e-12)
    assert np.isfinite(v @ (X @ theta))


def test_boundary_residual_zero_and_constant(s4):
    bq = s4.boundary
    res, xi = boundary_nonsmooth_residual(s4, mollify(zero_law(), 8), np.zeros(bq.size), "velocity")
    assert not res.any() and not xi.any()
    law = mollify(quadratic_law(), 8)
    res, xi = boundary_nonsmooth_residual(s4, law, np.ones(bq.size), "velocity")
    # test function equal to tau on Gamma_1: nodal value tau at every bottom node
    tau_field = np.zeros(s4.n_vel)
    for node, (x, y) in enumerate(s4.p2_nodes):
        if y == 0:
            tau_field[2 * node:2 * node + 2] = bq.tangents[0]
    assert res @ tau_field == pytest.approx(1.0, rel=1e-10)
    with pytest.raises(TypeError):
        boundary_nonsmooth_residual(s4, quadratic_law(), np.ones(bq.size), "velocity")


def test_boundary_residual_oracle(s4):
    law = mollify(quadratic_law(), 8)
    rng = np.random.default_rng(9)
    u = s4.velocity_full(rng.standard_normal(s4.n_u)).ravel()
    res, _ = boundary_nonsmooth_residual(s4, law, s4.boundary.trace_tau @ u, "velocity")
    ref = boundary_residual(s4, lambda s: s, u, "velocity")
    assert relative_error(res, ref) < 1e-8
    th = s4.temperature_full(rng.standard_normal(s4.n_theta))
    res, _ = boundary_nonsmooth_residual(s4, law, s4.boundary.trace_theta @ th, "temperature")
    assert relative_error(res, boundary_residual(s4, lambda s: s, th, "temperature")) < 1e-8


def test_boundary_multiplier_in_clarke_hull(s4):
    from hvboussinesq.laws import eval_clarke

    base = catalog()["stick_slip_jump"]
    m = 8
    law = mollify(base, m)
    s = np.random.default_rng(10).uniform(-0.5, 0.5, s4.boundary.size)
    _, xi = boundary_nonsmooth_residual(s4, law, s, "velocity")
    for si, x in zip(s, xi):
        grid = np.linspace(si - 1 / m, si + 1 / m, 41)
        lo = min(eval_clarke(base, g)[0] for g in grid)
        hi = max(eval_clarke(base, g)[1] for g in grid)
        assert lo - 1e-12 <= x <= hi + 1e-12
