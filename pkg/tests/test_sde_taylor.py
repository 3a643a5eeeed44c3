import numpy as np
import pytest
import sympy
from hypothesis import given
from hypothesis import strategies as st

from smdg.errors import ConfigurationError, DivergenceError, UnsupportedSchemeError
from smdg.sde_taylor import (EULER, TAYLOR2, LinearDiffusion, PathIncrements, SDESystem, coarsen_path,
                             euler_maruyama_step, gbm_strong_errors, get_stepper, increments_from_path,
                             integrate_increments, integrate_path, sample_increments, taylor2_step)


class ZeroNormal:
    def standard_normal(self, size=None):
        return np.zeros(size)


def test_zero_draws_give_zero_increments():
    inc = sample_increments(0.3, 50, ZeroNormal())
    assert inc.dW == inc.dZ == inc.dU == 0


@given(st.floats(1e-4, 2.0), st.integers(1, 200), st.integers(0, 2**31 - 1))
def test_increment_invariants(tau, m, seed):
    inc = sample_increments(tau, m, np.random.default_rng(seed))
    assert inc.dW == pytest.approx(np.sum(inc.fine_path), abs=1e-12)
    assert inc.dU >= 0
    assert inc.fine_path.shape == (m,)


def test_increments_reproducible():
    a = sample_increments(0.1, 20, np.random.Generator(np.random.Philox(7)), size=5)
    b = sample_increments(0.1, 20, np.random.Generator(np.random.Philox(7)), size=5)
    for name in ("dW", "dZ", "dU", "fine_path"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_bad_increment_arguments():
    rng = np.random.default_rng()
    with pytest.raises(ConfigurationError):
        sample_increments(0.0, 5, rng)
    with pytest.raises(ConfigurationError):
        sample_increments(0.1, 0, rng)


def test_increment_moments_small():
    tau, n = 0.5, 40000
    inc = sample_increments(tau, 100, np.random.default_rng(5), size=n)
    assert np.mean(inc.dW**2) == pytest.approx(tau, rel=0.03)
    assert np.var(inc.dZ) == pytest.approx(tau**3 / 3, rel=0.03)
    assert np.mean(inc.dW * inc.dZ) == pytest.approx(tau**2 / 2, rel=0.03)
    assert np.mean(inc.dU) == pytest.approx(tau**2 / 2, rel=0.03)


def test_fine_path_moments_match_brute_force_sampler():
    # trapezoid reduction at M=100 against left sums on a 10^4-point path
    tau, n = 1.0, 4000
    rng = np.random.default_rng(8)
    fine = rng.standard_normal((n, 10000)) * np.sqrt(tau / 10000)
    w = np.cumsum(fine, axis=1) - fine
    brute_u = np.mean(np.sum(w**2, axis=1) * tau / 10000)
    coarse = increments_from_path(fine.reshape(n, 100, 100).sum(axis=2), tau)
    assert np.mean(coarse.dU) == pytest.approx(brute_u, rel=0.02)


# -- multiple integrals and the ten-term expansion ---------------------------------


def multiple_integrals(tau, dW, dZ, dU):
    """Ito multiple integrals I_(j1,...,jl), j1 innermost, for one Wiener process."""
    return {
        (0,): tau, (1,): dW,
        (1, 1): 0.5 * (dW**2 - tau), (0, 0): 0.5 * tau**2,
        (1, 0): dZ, (0, 1): dW * tau - dZ,
        (1, 1, 1): (dW**3 - 3 * tau * dW) / 6,
        (1, 0, 1): dW * dZ - dU,
        (1, 1, 0): 0.5 * dU - 0.25 * tau**2,
        (0, 1, 1): 0.5 * tau * dW**2 + 0.5 * dU - dW * dZ - 0.25 * tau**2,
        (1, 1, 1, 1): (dW**4 - 6 * dW**2 * tau + 3 * tau**2) / 24,
    }


def test_multiple_integral_identities_by_brute_force():
    tau, m = 1.0, 400000
    rng = np.random.default_rng(21)
    for _ in range(3):
        dw = rng.standard_normal(m) * np.sqrt(tau / m)
        ds = np.full(m, tau / m)
        wt = np.concatenate([[0.0], np.cumsum(dw)])[:-1]
        dZ, dU = np.sum(wt * ds), np.sum(wt**2 * ds)
        table = multiple_integrals(tau, dw.sum(), dZ, dU)
        for alpha, value in table.items():
            j = np.ones(m + 1)
            for idx in alpha:
                incr = dw if idx == 1 else ds
                j = np.concatenate([[0.0], np.cumsum(j[:-1] * incr)])
            assert j[-1] == pytest.approx(value, abs=1.5e-2), alpha


def symbolic_taylor2(A, B, X, tau, dW, dZ, dU):
    """Ten-term expansion built from the generators L0 = a.grad + 1/2 b b : Hess, L1 = b.grad."""
    xs = sympy.symbols("x0:2")
    xv = sympy.Matrix(xs)
    a = sympy.Matrix(A) * xv
    b = sympy.Matrix(B) * xv

    def L0(f):
        jac = f.jacobian(xv)
        hess = [sympy.hessian(f[i], xs) for i in range(f.shape[0])]
        return jac * a + sympy.Matrix([sympy.Rational(1, 2) * (b.T * h * b)[0] for h in hess])

    def L1(f):
        return f.jacobian(xv) * b

    ops = {0: L0, 1: L1}
    base = {0: a, 1: b}
    out = xv
    for alpha, coef in multiple_integrals(tau, dW, dZ, dU).items():
        f = base[alpha[-1]]
        for idx in reversed(alpha[:-1]):
            f = ops[idx](f)
        out = out + coef * f
    return np.array(out.subs(dict(zip(xs, X))), dtype=float).ravel()


def test_taylor2_matches_symbolic_expansion():
    tau = 0.04
    dW, dZ, dU = np.sqrt(tau), tau**1.5 / 2, tau**2 / 3
    A = [[sympy.Rational(1, 3), -2], [sympy.Rational(5, 4), sympy.Rational(-1, 2)]]
    B = [[sympy.Rational(1, 2), sympy.Rational(1, 5)], [-1, sympy.Rational(3, 2)]]
    X = np.array([0.7, -1.3])
    sys = SDESystem(2, np.array(A, dtype=float), LinearDiffusion(np.array(B, dtype=float)))
    got = taylor2_step(X, sys, PathIncrements(tau, dW, dZ, dU))
    np.testing.assert_allclose(got, symbolic_taylor2(A, B, X, tau, dW, dZ, dU), rtol=1e-13)


def test_scalar_fast_path_matches_general_path():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(5, 5))
    X = rng.normal(size=(5, 3))
    inc = PathIncrements(0.1, rng.normal(size=3), rng.normal(size=3), rng.random(3))
    fast = taylor2_step(X, SDESystem(5, A, LinearDiffusion(0.7)), inc)
    full = taylor2_step(X, SDESystem(5, A, LinearDiffusion(0.7 * np.eye(5))), inc)
    np.testing.assert_allclose(fast, full, rtol=1e-12)


def test_no_noise_reduces_to_deterministic_taylor():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    X = rng.normal(size=4)
    tau = 0.05
    inc = PathIncrements(tau, 0.3, 0.01, 0.02)
    for B in (0.0, np.zeros((4, 4))):
        got = taylor2_step(X, SDESystem(4, A, LinearDiffusion(B)), inc)
        np.testing.assert_allclose(got, X + tau * A @ X + 0.5 * tau**2 * A @ A @ X, rtol=1e-13)


def test_taylor2_rejects_general_diffusion():
    sys = SDESystem(2, np.eye(2), lambda X, t: np.sin(X))
    with pytest.raises(UnsupportedSchemeError, match="Euler"):
        taylor2_step(np.ones(2), sys, PathIncrements(0.1, 0.1, 0.0, 0.0))
    out = euler_maruyama_step(np.ones(2), sys, PathIncrements(0.1, 0.2, 0.0, 0.0))
    np.testing.assert_allclose(out, 1 + 0.1 + 0.2 * np.sin(1.0))


def test_euler_identity_with_zero_data():
    X = np.array([1.0, 2.0])
    sys = SDESystem(2, np.zeros((2, 2)), LinearDiffusion(3.0))
    np.testing.assert_array_equal(euler_maruyama_step(X, sys, PathIncrements(0.1, 0.0, 0.0, 0.0)), X)


def test_linear_diffusion_homogeneous():
    rng = np.random.default_rng(2)
    for B in (2.5, rng.normal(size=(3, 3))):
        d = LinearDiffusion(B)
        X = rng.normal(size=3)
        assert not np.any(d(np.zeros(3)))
        np.testing.assert_allclose(d(-4.0 * X), -4.0 * d(X))


def test_euler_and_taylor_agree_to_first_order():
    rng = np.random.default_rng(3)
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    X = rng.normal(size=3)
    sys = SDESystem(3, A, LinearDiffusion(B))
    ratios = []
    for tau in (1e-2, 1e-3, 1e-4):
        z = 0.8
        inc = PathIncrements(tau, z * np.sqrt(tau), 0.5 * z * tau**1.5, tau**2 / 3)
        diff = np.linalg.norm(taylor2_step(X, sys, inc) - euler_maruyama_step(X, sys, inc))
        ratios.append(diff / tau)
    assert max(ratios) < 10 * min(ratios)


def test_gbm_strong_orders():
    res = gbm_strong_errors(levels=(16, 32, 64, 128), samples=300, seed=3)
    assert res["slope_taylor2"] > 1.8
    assert 0.35 < res["slope_euler"] < 0.75


def test_integrate_path_constant_without_dynamics():
    sys = SDESystem(3, np.zeros((3, 3)), LinearDiffusion(0.0))
    traj, W = integrate_path(np.arange(3.0), sys, 1.0, 10, rng=np.random.default_rng(0), substeps=4)
    assert traj.shape == (11, 3)
    np.testing.assert_array_equal(traj, np.tile(np.arange(3.0), (11, 1)))
    assert W[0] == 0


def test_integrate_path_w_telescopes():
    sys = SDESystem(1, np.zeros((1, 1)), LinearDiffusion(1.0))
    traj, W = integrate_path(np.ones(1), sys, 0.5, 8, scheme=EULER, rng=np.random.default_rng(1), substeps=3)
    # with zero drift Euler gives X_{n+1} = X_n (1 + dW_n); recover dW from the trajectory
    dW = traj[1:, 0] / traj[:-1, 0] - 1
    np.testing.assert_allclose(W, np.concatenate([[0.0], np.cumsum(dW)]), atol=1e-12)


def test_divergence_reports_step():
    sys = SDESystem(1, np.array([[1e200]]), LinearDiffusion(0.0))
    with pytest.raises(DivergenceError) as info:
        integrate_path(np.ones(1), sys, 1.0, 5, rng=np.random.default_rng(0), substeps=1)
    assert info.value.step == 1


def test_bad_integration_arguments():
    sys = SDESystem(1, np.zeros((1, 1)), LinearDiffusion(0.0))
    with pytest.raises(ConfigurationError):
        integrate_path(np.ones(1), sys, 1.0, 0)
    with pytest.raises(ConfigurationError):
        integrate_path(np.ones(1), sys, -1.0, 3)
    with pytest.raises(ConfigurationError):
        get_stepper("milstein")


def test_coarsened_paths_are_consistent():
    dw = np.random.default_rng(0).normal(size=(2, 24))
    incs = coarsen_path(dw, 4, 0.25)
    np.testing.assert_allclose(sum(i.dW for i in incs), dw.sum(axis=1))
    with pytest.raises(ConfigurationError):
        coarsen_path(dw, 5, 0.2)


def test_observer_and_trajectory():
    sys = SDESystem(2, np.array([[0.0, 1.0], [-1.0, 0.0]]), LinearDiffusion(0.0))
    incs = [PathIncrements(0.1, 0.0, 0.0, 0.0)] * 5
    seen = []
    traj = integrate_increments(np.array([1.0, 0.0]), sys, incs, TAYLOR2,
                                observer=lambda n, t, X: seen.append((n, t)), keep_trajectory=True)
    assert len(traj) == 6 and seen[0] == (0, 0.0) and seen[-1][0] == 5
    assert seen[-1][1] == pytest.approx(0.5)
