import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from chstep import KrylovStepFailure, ee2_constant_step, ee2_krylov_step, phi_dense
from chstep.krylov import KrylovDecomposition, arnoldi_extend, krylov_phi_step, krylov_resnorm

from conftest import grid_problem, spd_problem


def phi_eig(M):
    """phi of a symmetric matrix through its eigendecomposition."""
    lam, Q = np.linalg.eigh(M)
    f = np.where(np.abs(lam) < 1e-12, 1.0 + lam / 2, np.expm1(lam) / np.where(lam == 0, 1, lam))
    return Q @ np.diag(f) @ Q.T


def exact_step(sys, y, tau):
    d = sys.dense()
    return y + tau * phi_dense(-tau * d) @ (sys.g_hat - d @ y)


def dense_arnoldi(M, r0, m):
    """Textbook modified Gram-Schmidt Arnoldi without reorthogonalization."""
    n = len(r0)
    V = np.zeros((n, m + 1))
    H = np.zeros((m + 1, m))
    V[:, 0] = r0 / np.linalg.norm(r0)
    for j in range(m):
        w = M @ V[:, j]
        for i in range(j + 1):
            H[i, j] = w @ V[:, i]
            w = w - H[i, j] * V[:, i]
        H[j + 1, j] = np.linalg.norm(w)
        V[:, j + 1] = w / H[j + 1, j]
    return V, H


def test_phi_dense_examples():
    np.testing.assert_allclose(phi_dense(np.zeros((3, 3))), np.eye(3), atol=1e-15)
    assert phi_dense(np.array([[1.0]]))[0, 0] == pytest.approx(math.e - 1, rel=1e-14)
    z = np.array([-30.0, -1.0, 1e-9, 0.5, 2.0])
    np.testing.assert_allclose(np.diag(phi_dense(np.diag(z))), np.expm1(z) / z, rtol=1e-13)
    with pytest.raises(ValueError):
        phi_dense(np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), scale=st.floats(0.01, 50.0), seed=st.integers(0, 2**32 - 1))
def test_phi_dense_symmetric_oracle(n, scale, seed):
    b = np.random.default_rng(seed).standard_normal((n, n))
    M = -scale * (b @ b.T) / n
    ref = phi_eig(M)
    np.testing.assert_allclose(phi_dense(M), ref, rtol=0, atol=1e-12 * max(1.0, np.abs(ref).max()))


def test_breakdown_for_scaled_identity():
    dec = KrylovDecomposition(np.arange(1.0, 6.0), 4, breakdown_tol=1e-14 * 3)
    arnoldi_extend(lambda v: 3.0 * v, dec)
    assert dec.m == 1 and dec.breakdown and dec.h_next == 0.0
    assert dec.H_square[0, 0] == pytest.approx(3.0)
    with pytest.raises(ValueError):
        arnoldi_extend(lambda v: 3.0 * v, dec)


def test_breakdown_for_eigenvector_start(rng):
    p = spd_problem(rng, 8, eyre=True)
    sys = p.linearize(rng.standard_normal(8))
    w, V = np.linalg.eig(sys.dense())
    v = np.real(V[:, np.argmax(np.abs(w.real))])
    dec = KrylovDecomposition(v, 5, breakdown_tol=1e-10 * sys.one_norm())
    arnoldi_extend(sys, dec)
    assert dec.breakdown and dec.m == 1


@pytest.mark.parametrize("eyre", [False, True])
def test_arnoldi_matches_dense(rng, eyre):
    p = grid_problem(4, eyre=eyre, length=16.0)
    y = rng.uniform(-1, 1, 16)
    sys = p.linearize(y)
    r0 = sys.residual(y)
    m = 6
    dec = KrylovDecomposition(r0, m)
    for _ in range(m):
        arnoldi_extend(sys, dec)
    V, H = dense_arnoldi(sys.dense(), r0, m)
    np.testing.assert_allclose(dec.V, V, atol=1e-12)
    np.testing.assert_allclose(dec.H, H, atol=1e-12 * sys.one_norm())


@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 6), m=st.integers(1, 12), eyre=st.booleans(), seed=st.integers(0, 2**32 - 1))
def test_arnoldi_invariants(n, m, eyre, seed):
    rng = np.random.default_rng(seed)
    p = grid_problem(n, eyre=eyre)
    sys = p.linearize(rng.uniform(-1, 1, p.size))
    dec = KrylovDecomposition(rng.standard_normal(p.size), m, breakdown_tol=1e-14 * sys.one_norm())
    while dec.m < m and not dec.breakdown:
        arnoldi_extend(sys, dec)
    k = dec.m
    V = dec.basis[: k + 1].T if not dec.breakdown else dec.basis[:k].T
    np.testing.assert_allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-10)
    Hk = dec.H[: V.shape[1], :k]
    assert np.linalg.norm(sys.dense() @ V[:, :k] - V @ Hk) <= 1e-10 * sys.one_norm()
    assert np.all(np.diag(dec.H, -1)[:k] >= 0)


def test_resnorm_trivial_cases(rng):
    p = spd_problem(rng, 6, eyre=True)
    sys = p.linearize(rng.standard_normal(6))
    dec = KrylovDecomposition(rng.standard_normal(6), 3)
    with pytest.raises(ValueError):
        krylov_resnorm(dec, 0.5)
    arnoldi_extend(sys, dec)
    assert krylov_resnorm(dec, 0.0) == 0.0
    dec.H[dec.m, dec.m - 1] = 0.0
    assert krylov_resnorm(dec, 0.7) == 0.0


def test_resnorm_matches_definition(rng):
    p = spd_problem(rng, 6, eyre=True)
    y = rng.standard_normal(6)
    sys = p.linearize(y)
    d = sys.dense()
    r0 = sys.g_hat - d @ y
    dec = KrylovDecomposition(r0, 3)
    for _ in range(3):
        arnoldi_extend(sys, dec)
    t = 0.5
    Vm, Hm, beta = dec.V[:, :3], dec.H_square, dec.beta
    e1 = np.eye(3)[:, 0]
    y_t = y + Vm @ (beta * t * phi_dense(-t * Hm) @ e1)
    dy_t = Vm @ (beta * sla.expm(-t * Hm) @ e1)
    r = -d @ y_t + sys.g_hat - dy_t
    assert krylov_resnorm(dec, t) == pytest.approx(np.linalg.norm(r) / beta, rel=1e-10)


def test_stationary_start_short_circuits(rng):
    p = spd_problem(rng, 6)
    y = rng.standard_normal(6)
    sys = p.linearize(y)
    res = krylov_phi_step(sys.apply, y, np.zeros(6), 0.3, 1e-6, 4)
    assert res.tau_accepted == 0.3 and res.matvecs == 0
    np.testing.assert_array_equal(res.y_next, y)
    assert sys.matvecs == 0


@pytest.mark.parametrize("eyre", [False, True])
def test_full_space_is_exact(rng, eyre):
    p = grid_problem(6, eyre=eyre, length=64.0)
    y = rng.uniform(-1, 1, 36)
    sys = p.linearize(y)
    tau = 0.7
    res = ee2_krylov_step(sys, y, tau, 1e-14, m_max=36)
    assert res.tau_accepted == tau
    ref = exact_step(sys, y, tau)
    assert np.linalg.norm(res.y_next - ref) <= 1e-10 * np.linalg.norm(ref)


def test_shortened_step_sits_on_tolerance_boundary(rng):
    p = spd_problem(rng, 12, eyre=True)
    y = rng.standard_normal(12)
    sys = p.linearize(y)
    tol = 1e-6
    res = ee2_krylov_step(sys, y, 50.0, tol, m_max=3)
    assert res.tau_accepted < 50.0 and not res.converged_early and res.m_used == 3
    assert krylov_resnorm(res.decomp, res.tau_accepted) <= tol
    assert krylov_resnorm(res.decomp, 1.01 * res.tau_accepted) > tol
    assert res.resnorm <= tol


def test_unreachable_tolerance_fails(rng):
    p = spd_problem(rng, 12, eyre=True)
    y = rng.standard_normal(12)
    sys = p.linearize(y)
    with pytest.raises(KrylovStepFailure):
        ee2_krylov_step(sys, y, 1.0, 1e-300, m_max=1)


def test_matvecs_match_counter(rng):
    p = grid_problem(8, length=64.0)
    y = rng.uniform(-0.1, 0.1, 64)
    sys = p.linearize(y)
    res = ee2_krylov_step(sys, y, 2.0, 1e-6, m_max=10)
    assert res.matvecs == res.m_used + 1 == sys.matvecs
    sys2 = p.linearize(y)
    r0 = sys2.residual(y)
    res2 = ee2_krylov_step(sys2, y, 2.0, 1e-6, m_max=10, r0=r0)
    assert res2.matvecs == sys2.matvecs
    np.testing.assert_array_equal(res.y_next, res2.y_next)


def test_gauge_invariance(rng):
    p = spd_problem(rng, 10, eyre=True)
    y = rng.standard_normal(10)
    sys = p.linearize(y)
    r0 = sys.residual(y)
    base = krylov_phi_step(sys.apply, y, r0, 5.0, 1e-6, 4)
    for c in (1e-3, 7.5, 1e4):
        scaled = krylov_phi_step(sys.apply, y, c * r0, 5.0, 1e-6, 4)
        assert scaled.tau_accepted == pytest.approx(base.tau_accepted, rel=1e-12)
        np.testing.assert_allclose(scaled.y_next - y, c * (base.y_next - y),
                                   rtol=0, atol=1e-12 * c * np.linalg.norm(base.y_next - y))


def test_scan_and_bisect_agree(rng):
    p = spd_problem(rng, 12, eyre=True)
    y = rng.standard_normal(12)
    a = ee2_krylov_step(p.linearize(y), y, 20.0, 1e-5, 3, trace="bisect")
    b = ee2_krylov_step(p.linearize(y), y, 20.0, 1e-5, 3, trace="scan")
    assert b.tau_accepted <= a.tau_accepted <= b.tau_accepted + 20.0 / 1000


def test_constant_step_single_sweep_equals_krylov_step(rng):
    p = grid_problem(6, length=64.0)
    y = rng.uniform(-0.1, 0.1, 36)
    one = ee2_krylov_step(p.linearize(y), y, 0.1, 1e-8, 30)
    assert one.converged_early
    whole = ee2_constant_step(p.linearize(y), y, 0.1, 1e-8, 30)
    assert whole.restarts == 0
    np.testing.assert_array_equal(whole.y_next, one.y_next)


def test_constant_step_full_space(rng):
    p = grid_problem(6, eyre=True, length=64.0)
    y = rng.uniform(-1, 1, 36)
    sys = p.linearize(y)
    ref = exact_step(sys, y, 3.0)
    res = ee2_constant_step(sys, y, 3.0, 1e-13, 36)
    assert np.linalg.norm(res.y_next - ref) <= 1e-10 * np.linalg.norm(ref)


def test_restarts_reach_dense_solution(rng):
    p = spd_problem(rng, 15, eyre=True)
    y = rng.standard_normal(15)
    sys = p.linearize(y)
    tol = 1e-8
    res = ee2_constant_step(sys, y, 10.0, tol, 3)
    assert res.restarts > 0
    assert res.matvecs == sys.matvecs
    ref = exact_step(sys, y, 10.0)
    assert np.linalg.norm(res.y_next - ref) <= 10 * tol * np.linalg.norm(sys.residual(y))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 8), m=st.integers(1, 8), tau=st.floats(0.1, 100.0), seed=st.integers(0, 2**32 - 1))
def test_resnorm_nondecreasing_for_eyre(n, m, tau, seed):
    rng = np.random.default_rng(seed)
    p = grid_problem(n, eyre=True, length=float(rng.uniform(n, 64)))
    y = rng.uniform(-1, 1, p.size)
    sys = p.linearize(y)
    dec = KrylovDecomposition(sys.residual(y), m, breakdown_tol=1e-14 * sys.one_norm())
    while dec.m < m and not dec.breakdown:
        arnoldi_extend(sys, dec)
    vals = np.array([krylov_resnorm(dec, s) for s in np.linspace(0, tau, 50)])
    assert np.all(np.diff(vals) >= -1e-12)
