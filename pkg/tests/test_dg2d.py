import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smdg.dg1d import FluxParams1D, drift_matrix_1d
from smdg.dg2d import (FluxParams2D, NoiseSpec2D, State2D, assemble_drift_2d, assemble_noise_2d,
                       discrete_energy_2d, drift_matrix_2d, initial_state_2d, l2_error_2d, noise_matrix_2d,
                       radau_projection_2d, superconvergence_functional)
from smdg.errors import ConfigurationError, StructureError, WellPosednessError
from smdg.mesh_basis import build_mesh_1d, build_mesh_2d, l2_norm_error_2d, l2_project, l2_project_2d
from smdg.sde_taylor import LinearDiffusion, PathIncrements, SDESystem, taylor2_step

TWO_PI = 2 * np.pi


def mesh2(nx, ny=None):
    return build_mesh_2d(0, TWO_PI, nx, 0, TWO_PI, nx if ny is None else ny)


def random_state(mesh, k, seed):
    rng = np.random.default_rng(seed)
    return State2D(mesh, *(rng.normal(size=mesh.shape + ((k + 1) ** 2,)) for _ in range(3)))


def test_state_checks():
    m = mesh2(3)
    with pytest.raises(StructureError):
        State2D(m, np.zeros((3, 3, 4)), np.zeros((3, 3, 4)), np.zeros((3, 3, 9)))
    with pytest.raises(StructureError):
        State2D(m, np.zeros((3, 3, 3)), np.zeros((3, 3, 3)), np.zeros((3, 3, 3)))


def test_zero_and_constant_drift():
    m = mesh2(5, 4)
    flux = FluxParams2D(0.3, -0.2)
    zero = State2D(m, *(np.zeros((5, 4, 4)),) * 3)
    assert not any(d.any() for d in assemble_drift_2d(zero, flux))
    c = [l2_project_2d(lambda x, y, v=v: v + 0 * x * y, m, 1) for v in (1.0, -2.0, 0.5)]
    for d in assemble_drift_2d(State2D(m, *c), flux):
        np.testing.assert_allclose(d, 0, atol=1e-13)


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.integers(0, 2), st.integers(0, 2**31 - 1))
def test_drift_is_skew(a1, a2, k, seed):
    m = mesh2(4, 3)
    A = drift_matrix_2d(m, k, FluxParams2D(a1, a2))
    x = random_state(m, k, seed).stacked()
    assert abs(x @ (A @ x)) <= 1e-10 * (1 + np.abs(A).max()) * (x @ x)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_matrix_matches_matrix_free(k):
    m = build_mesh_2d(0, 1, 4, 0, 3, 5)
    flux = FluxParams2D(0.4, -0.15)
    s = random_state(m, k, 7)
    got = drift_matrix_2d(m, k, flux) @ s.stacked()
    want = np.concatenate([d.ravel() for d in assemble_drift_2d(s, flux)])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_hand_built_stencil_k0():
    # 4x4 cells, piecewise constants; G(c; a)_i = -[(1/2-a)(c_i - c_{i-1}) + (1/2+a)(c_{i+1} - c_i)] / h
    n = 4
    m = build_mesh_2d(0, 2.0, n, 0, 3.0, n)
    hx, hy = 2.0 / n, 3.0 / n
    a1, a2 = 0.3, -0.7

    def gx(c, a):
        return -((0.5 - a) * (c - np.roll(c, 1, 0)) + (0.5 + a) * (np.roll(c, -1, 0) - c)) / hx

    def gy(c, a):
        return -((0.5 - a) * (c - np.roll(c, 1, 1)) + (0.5 + a) * (np.roll(c, -1, 1) - c)) / hy

    rng = np.random.default_rng(3)
    E, S, T = (rng.normal(size=(n, n)) for _ in range(3))
    want = np.concatenate([(-gx(T, a1) + gy(S, -a2)).ravel(), gy(E, a2).ravel(), (-gx(E, -a1)).ravel()])
    A = drift_matrix_2d(m, 0, FluxParams2D(a1, a2))
    np.testing.assert_allclose(A @ np.concatenate([E.ravel(), S.ravel(), T.ravel()]), want, atol=1e-13)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_dimensional_reduction_drift(k):
    # y-independent data with S = 0: (E, T) follow the 1D operator with v = E, u = -T
    nx, ny = 6, 3
    m = build_mesh_2d(0, TWO_PI, nx, 0, 1.0, ny)
    mx = m.mesh_x
    alpha = 0.35
    rng = np.random.default_rng(0)
    u = rng.normal(size=(nx, k + 1))
    v = rng.normal(size=(nx, k + 1))
    hy = 1.0 / ny

    def lift(c):
        # y-constant mode: coefficient times sqrt(hy) on ly = 0
        out = np.zeros((nx, ny, k + 1, k + 1))
        out[:, :, :, 0] = c[:, None, :] * np.sqrt(hy)
        return out.reshape(nx, ny, (k + 1) ** 2)

    s = State2D(m, lift(v), np.zeros((nx, ny, (k + 1) ** 2)), lift(-u))
    dE, dS, dT = assemble_drift_2d(s, FluxParams2D(alpha, 0.2))
    A1 = drift_matrix_1d(mx, k, FluxParams1D(alpha))
    d1 = A1 @ np.concatenate([u.ravel(), v.ravel()])
    du, dv = d1[:nx * (k + 1)].reshape(nx, k + 1), d1[nx * (k + 1):].reshape(nx, k + 1)
    np.testing.assert_allclose(dE, lift(dv), atol=1e-12)
    np.testing.assert_allclose(dT, lift(-du), atol=1e-12)
    np.testing.assert_allclose(dS, 0, atol=1e-12)


def test_y_constant_data_stays_y_constant():
    m = mesh2(6, 5)
    k = 2
    flux = FluxParams2D(0.5, 0.5)
    s = initial_state_2d(lambda x, y: np.sin(x) + 0 * y, lambda x, y: 0 * x * y,
                         lambda x, y: np.cos(x) + 0 * y, m, k, flux)
    sys = SDESystem(3 * m.n_cells * (k + 1) ** 2, drift_matrix_2d(m, k, flux), LinearDiffusion(1.0))
    X = s.stacked()
    rng = np.random.default_rng(1)
    for _ in range(20):
        dW = 0.1 * rng.normal()
        X = taylor2_step(X, sys, PathIncrements(0.01, dW, 0.005 * dW, 0.001 * dW**2))
    modes = X.reshape(3, 6, 5, k + 1, k + 1)
    assert np.abs(modes[..., 1:]).max() <= 1e-12
    assert np.ptp(modes[..., 0], axis=2).max() <= 1e-12


def test_identity_and_zero_noise():
    m = mesh2(3)
    s = random_state(m, 1, 2)
    noise = NoiseSpec2D.linear(np.eye(3))
    for got, want in zip(assemble_noise_2d(s, noise), (s.E, s.S, s.T)):
        np.testing.assert_allclose(got, want, atol=1e-13)
    assert noise_matrix_2d(m, 1, noise) == 1.0
    assert not any(p.any() for p in assemble_noise_2d(s, NoiseSpec2D.zero()))


def test_general_noise_matrix_and_space_only_noise():
    m = mesh2(3, 2)
    c = np.arange(9.0).reshape(3, 3) / 7
    noise = NoiseSpec2D.linear(c)
    s = random_state(m, 1, 4)
    B = noise_matrix_2d(m, 1, noise)
    np.testing.assert_allclose(B @ s.stacked(), np.concatenate([p.ravel() for p in assemble_noise_2d(s, noise)]),
                               atol=1e-12)
    space = NoiseSpec2D(f=lambda x, y, t, E, S, T: np.sin(x) * np.cos(y) + 0 * E,
                        g=lambda x, y, t, E, S, T: x + 0 * E, r=lambda x, y, t, E, S, T: 0 * E)
    pf, pg, pr = assemble_noise_2d(s, space)
    np.testing.assert_allclose(pf, l2_project_2d(lambda x, y: np.sin(x) * np.cos(y), m, 1, n_points=3), atol=1e-14)
    np.testing.assert_allclose(pg, l2_project_2d(lambda x, y: x + 0 * y, m, 1, n_points=3), atol=1e-13)
    assert noise_matrix_2d(m, 1, space) is None


VARIANTS = [(0.5, None), (None, -0.4), (0.3, 0.6), (-0.5, 0.5)]


@pytest.mark.parametrize("ax,ay", VARIANTS)
def test_radau_2d_reproduces_constants(ax, ay):
    m = mesh2(5, 3)
    got = radau_projection_2d(lambda x, y: 2.5 + 0 * x * y, m, 2, ax, ay)
    np.testing.assert_allclose(got, l2_project_2d(lambda x, y: 2.5 + 0 * x * y, m, 2), atol=1e-12)


def _tri(x, period, n):
    # periodic continuous piecewise-linear hat wave with kinks at mesh nodes
    h = period / n
    s = np.mod(x, 2 * h) / h
    return np.minimum(s, 2 - s)


@pytest.mark.parametrize("ax,ay", VARIANTS)
def test_radau_2d_identity_on_continuous_tensor_polynomials(ax, ay):
    m = mesh2(4, 6)
    fn = lambda x, y: (1 + _tri(x, TWO_PI, 4)) * (2 - _tri(y, TWO_PI, 6))  # noqa: E731
    exact = l2_project_2d(fn, m, 1)
    assert l2_norm_error_2d(exact, m, fn) < 1e-13
    np.testing.assert_allclose(radau_projection_2d(fn, m, 1, ax, ay), exact, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2])
def test_radau_2d_rate(k):
    fn = lambda x, y: np.sin(x + y)  # noqa: E731
    errs = [l2_norm_error_2d(radau_projection_2d(fn, mesh2(n), k, 0.5, -0.5), mesh2(n), fn) for n in (8, 16, 32)]
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert rates.min() > k + 0.9


def test_zero_alpha_rejected_and_init_falls_back():
    m = mesh2(4)
    with pytest.raises(WellPosednessError):
        radau_projection_2d(np.add, m, 1, 0.0, 0.5)
    with pytest.warns(UserWarning, match="L2"):
        s = initial_state_2d(np.add, np.subtract, np.multiply, m, 1, FluxParams2D(0.0, 0.5))
    np.testing.assert_allclose(s.T, l2_project_2d(np.multiply, m, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        initial_state_2d(np.add, np.subtract, np.multiply, m, 1, FluxParams2D(0.5, 0.5))
    with pytest.raises(ConfigurationError):
        initial_state_2d(np.add, np.subtract, np.multiply, m, 1, FluxParams2D(), init="nodal")


def test_initial_state_variants_match_projections():
    m = mesh2(6)
    flux = FluxParams2D(0.4, 0.3)
    E0 = lambda x, y: np.sin(x) * np.cos(y)  # noqa: E731
    s = initial_state_2d(E0, E0, E0, m, 1, flux)
    np.testing.assert_allclose(s.E, radau_projection_2d(E0, m, 1, -0.4, 0.3))
    np.testing.assert_allclose(s.S, radau_projection_2d(E0, m, 1, None, -0.3))
    np.testing.assert_allclose(s.T, radau_projection_2d(E0, m, 1, 0.4, None))


@pytest.mark.parametrize("direction", ["x", "y"])
def test_superconvergence_functional_decay(direction):
    w = lambda x, y: np.sin(x) * np.cos(2 * y) + np.cos(x + y)  # noqa: E731
    norms = [np.linalg.norm(superconvergence_functional(w, mesh2(n), 1, 0.5, -0.3, direction))
             for n in (32, 64, 128)]
    rates = np.log2(np.array(norms[:-1]) / norms[1:])
    assert rates.min() > 1.9


def test_superconvergence_vanishes_for_projected_polynomials():
    # w in V_h (continuous, periodic) gives eps = 0, so the functional is identically zero
    m = mesh2(4, 6)
    w = lambda x, y: (1 + _tri(x, TWO_PI, 4)) * (2 - _tri(y, TWO_PI, 6))  # noqa: E731
    for d in ("x", "y"):
        np.testing.assert_allclose(superconvergence_functional(w, m, 1, 0.5, -0.3, d), 0, atol=1e-12)
    with pytest.raises(ConfigurationError):
        superconvergence_functional(w, m, 1, 0.5, 0.5, "z")


def test_energy_and_errors():
    m = build_mesh_2d(0, 1, 3, 0, 2, 2)
    s = random_state(m, 2, 9)
    zero = lambda x, y: 0 * x * y  # noqa: E731
    fine = sum(l2_norm_error_2d(c, m, zero, n_points=8) ** 2 for c in (s.E, s.S, s.T))
    assert discrete_energy_2d(s) == pytest.approx(fine, rel=1e-12)
    assert discrete_energy_2d(State2D(m, *(np.zeros((3, 2, 9)),) * 3)) == 0
    e = l2_error_2d(s, zero, zero, zero)
    assert e[0] == pytest.approx(np.linalg.norm(s.E), rel=1e-12)
