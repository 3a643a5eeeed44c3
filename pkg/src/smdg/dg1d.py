"""Semi-discrete DG operator for the 1D stochastic Maxwell system

    dv = -u_x dt + f(x, t, u, v) dW,
    du = -v_x dt + g(x, t, u, v) dW,

on a periodic mesh with the generalized fluxes

    u_hat = {u} + alpha [u] - beta1 [v],
    v_hat = {v} - alpha [v] - beta2 [u].

The stacked state vector used by the time integrators is ``[u.ravel(), v.ravel()]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, StructureError, WellPosednessError
from .mesh_basis import (Basis, Mesh1D, evaluate_on_cells, gauss_quadrature,
                         l2_norm_error, l2_project)


@dataclass(frozen=True)
class FluxParams1D:
    alpha: float = 0.5
    beta1: float = 0.0
    beta2: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta1", "beta2"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"flux parameter {name} must be finite")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ConfigurationError(
                "energy law requires beta1 >= 0 and beta2 >= 0, "
                f"got beta1={self.beta1}, beta2={self.beta2}")

    @property
    def projection_well_posed(self) -> bool:
        return self.alpha**2 + self.beta1 * self.beta2 != 0


@dataclass
class State1D:
    mesh: Mesh1D
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise StructureError(f"u and v must share shape (N, k+1), got {self.u.shape} and {self.v.shape}")
        if self.u.shape[0] != self.mesh.n_cells:
            raise StructureError(f"fields have {self.u.shape[0]} cells, mesh has {self.mesh.n_cells}")

    @property
    def degree(self) -> int:
        return self.u.shape[1] - 1

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    @classmethod
    def from_stacked(cls, mesh: Mesh1D, x: np.ndarray, t: float = 0.0) -> "State1D":
        n = x.shape[0] // 2
        n_modes = n // mesh.n_cells
        return cls(mesh, x[:n].reshape(mesh.n_cells, n_modes), x[n:].reshape(mesh.n_cells, n_modes), t)


@dataclass(frozen=True)
class NoiseSpec1D:
    """Noise coefficients ``f`` (v-equation) and ``g`` (u-equation).

    Both are called as ``fn(x, t, u, v)`` on arrays of quadrature-point values.
    ``coupling`` is set for noise that is linear in the state with constant
    coefficients: row 0 gives ``g = c00 u + c01 v``, row 1 ``f = c10 u + c11 v``.
    """

    f: Callable
    g: Callable
    coupling: np.ndarray | None = field(default=None)

    @classmethod
    def linear(cls, coupling) -> "NoiseSpec1D":
        c = np.array(coupling, dtype=float)
        if c.shape != (2, 2):
            raise ConfigurationError("1D coupling must be a 2x2 matrix")
        c.setflags(write=False)
        return cls(f=lambda x, t, u, v: c[1, 0] * u + c[1, 1] * v,
                   g=lambda x, t, u, v: c[0, 0] * u + c[0, 1] * v,
                   coupling=c)

    @classmethod
    def zero(cls) -> "NoiseSpec1D":
        return cls.linear(np.zeros((2, 2)))

    @property
    def is_linear(self) -> bool:
        return self.coupling is not None

    def functions(self):
        """Coefficient functions in stacked-state order ``(g, f)``."""
        return self.g, self.f


def check_linear_noise(noise, n_fields: int, rng=None, n_trials: int = 8, tol: float = 1e-10) -> bool:
    """Sample ``noise`` to confirm a declared linear coupling has no affine offset.

    Works for both 1D (two fields) and 2D (three fields) noise specs.
    """
    if noise.coupling is None:
        return False
    rng = np.random.default_rng(0) if rng is None else rng
    fns = noise.functions()
    for _ in range(n_trials):
        x = rng.uniform(-3, 3, size=(4,))
        extra = () if n_fields == 2 else (rng.uniform(-3, 3, size=(4,)),)
        t = rng.uniform(0, 1)
        a = rng.normal(size=(n_fields, 4))
        b = rng.normal(size=(n_fields, 4))
        s1, s2 = rng.normal(size=2)
        for row, fn in enumerate(fns):
            fa = fn(x, *extra, t, *a)
            fb = fn(x, *extra, t, *b)
            fab = fn(x, *extra, t, *(s1 * a + s2 * b))
            if np.max(np.abs(fab - (s1 * fa + s2 * fb))) > tol * (1 + np.max(np.abs(fab))):
                return False
            if np.max(np.abs(fn(x, *extra, t, *np.zeros_like(a)))) > tol:
                return False
            if not np.allclose(fa, noise.coupling[row] @ a, atol=tol, rtol=tol):
                return False
    return True


# -- drift ---------------------------------------------------------------


def _as_lines(p):
    """View ``(N, k+1)`` or ``(N, k+1, ...)`` as ``(N, k+1, batch)``."""
    return p.reshape(p.shape[0], p.shape[1], -1)


def flux_form(p: np.ndarray, alpha: float, mesh: Mesh1D) -> np.ndarray:
    """Coefficients of ``int p phi_x dx - (p_hat phi^-)_{j+1/2} + (p_hat phi^+)_{j-1/2}``.

    ``p_hat = {p} + alpha [p]``.  ``p`` has shape ``(N, k+1, ...)``; trailing
    axes are independent lines (used by the 2D operator).
    """
    shape = p.shape
    p = _as_lines(p)
    basis = Basis(p.shape[1] - 1)
    s = mesh.scale[:, None]
    p_right = s * np.einsum("l,jlb->jb", basis.right, p)
    p_left = s * np.einsum("l,jlb->jb", basis.left, p)
    # edge j+1/2 sits between cell j (minus side) and cell j+1 (plus side)
    flux = (0.5 - alpha) * p_right + (0.5 + alpha) * np.roll(p_left, -1, axis=0)
    vol = (2.0 / mesh.widths)[:, None, None] * np.einsum("ml,jlb->jmb", basis.stiffness, p)
    out = (vol
           - s[:, None] * basis.right[None, :, None] * flux[:, None, :]
           + s[:, None] * basis.left[None, :, None] * np.roll(flux, 1, axis=0)[:, None, :])
    return out.reshape(shape)


def jump_form(p: np.ndarray, mesh: Mesh1D) -> np.ndarray:
    """Coefficients of ``[p]_{j+1/2} phi^-_{j+1/2} - [p]_{j-1/2} phi^+_{j-1/2}``.

    This is the dissipative beta-term; its inner product with ``p`` equals
    ``-sum_e [p]_e**2``.
    """
    shape = p.shape
    p = _as_lines(p)
    basis = Basis(p.shape[1] - 1)
    s = mesh.scale[:, None]
    p_right = s * np.einsum("l,jlb->jb", basis.right, p)
    p_left = s * np.einsum("l,jlb->jb", basis.left, p)
    jump = np.roll(p_left, -1, axis=0) - p_right
    out = (s[:, None] * basis.right[None, :, None] * jump[:, None, :]
           - s[:, None] * basis.left[None, :, None] * np.roll(jump, 1, axis=0)[:, None, :])
    return out.reshape(shape)


def assemble_drift_1d(state: State1D, flux: FluxParams1D) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic right-hand side ``(du/dt, dv/dt)`` in coefficient form."""
    u, v, mesh = state.u, state.v, state.mesh
    dv = flux_form(u, flux.alpha, mesh)
    du = flux_form(v, -flux.alpha, mesh)
    if flux.beta1:
        dv = dv + flux.beta1 * jump_form(v, mesh)
    if flux.beta2:
        du = du + flux.beta2 * jump_form(u, mesh)
    return du, dv


def trace_matrices(mesh: Mesh1D, degree: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """``(R, L)`` mapping coefficients to traces at edge ``j+1/2``.

    ``R`` gives the value from cell ``j`` (minus side), ``L`` from cell
    ``j+1`` (plus side, periodic).
    """
    n, m = mesh.n_cells, degree + 1
    basis = Basis(degree)
    edges = np.repeat(np.arange(n), m)
    cols_r = np.arange(n * m)
    cols_l = (np.repeat((np.arange(n) + 1) % n, m) * m + np.tile(np.arange(m), n))
    vals_r = (mesh.scale[:, None] * basis.right[None, :]).ravel()
    vals_l = (np.roll(mesh.scale, -1)[:, None] * basis.left[None, :]).ravel()
    R = sp.csr_matrix((vals_r, (edges, cols_r)), shape=(n, n * m))
    L = sp.csr_matrix((vals_l, (edges, cols_l)), shape=(n, n * m))
    return R, L


def flux_form_matrix(mesh: Mesh1D, degree: int, alpha: float) -> sp.csr_matrix:
    """Sparse matrix of :func:`flux_form`, assembled from trace operators."""
    basis = Basis(degree)
    R, L = trace_matrices(mesh, degree)
    K = sp.block_diag([(2.0 / h) * basis.stiffness for h in mesh.widths], format="csr")
    return (K - (R - L).T @ ((0.5 - alpha) * R + (0.5 + alpha) * L)).tocsr()


def jump_form_matrix(mesh: Mesh1D, degree: int) -> sp.csr_matrix:
    R, L = trace_matrices(mesh, degree)
    J = L - R
    return (-(J.T @ J)).tocsr()


def drift_matrix_1d(mesh: Mesh1D, degree: int, flux: FluxParams1D) -> sp.csr_matrix:
    """The drift operator ``A`` acting on stacked ``[u; v]`` coefficients."""
    g_plus = flux_form_matrix(mesh, degree, flux.alpha)
    g_minus = flux_form_matrix(mesh, degree, -flux.alpha)
    jj = jump_form_matrix(mesh, degree)
    return sp.bmat([[flux.beta2 * jj, g_minus],
                    [g_plus, flux.beta1 * jj]], format="csr")


# -- noise ---------------------------------------------------------------


def assemble_noise_1d(state: State1D, noise: NoiseSpec1D) -> tuple[np.ndarray, np.ndarray]:
    """``(P(g), P(f))`` evaluated on the numerical solution at ``k + 2`` points per cell."""
    mesh, k = state.mesh, state.degree
    q = gauss_quadrature(k + 2)
    x = mesh.points(q.nodes)
    u = evaluate_on_cells(state.u, mesh, q.nodes)
    v = evaluate_on_cells(state.v, mesh, q.nodes)
    gu = l2_project(lambda _: noise.g(x, state.t, u, v), mesh, k, n_points=k + 2)
    fv = l2_project(lambda _: noise.f(x, state.t, u, v), mesh, k, n_points=k + 2)
    return gu, fv


def noise_matrix_1d(mesh: Mesh1D, degree: int, noise: NoiseSpec1D):
    """``B`` with ``b(X) = B X`` for linear noise.

    Returns a float when the coupling is a multiple of the identity (the
    integrators then take a cheaper path), otherwise a sparse matrix.
    """
    if noise.coupling is None:
        return None
    c = noise.coupling
    if c[0, 1] == 0 and c[1, 0] == 0 and c[0, 0] == c[1, 1]:
        return float(c[0, 0])
    n = mesh.n_cells * (degree + 1)
    return sp.kron(sp.csr_matrix(c), sp.identity(n), format="csr")


# -- projections -----------------------------------------------------------


def _cell_moments(fn, mesh: Mesh1D, degree: int) -> np.ndarray:
    return l2_project(fn, mesh, degree)


def global_projection_pair_1d(q, r, mesh: Mesh1D, degree: int,
                              flux: FluxParams1D) -> tuple[np.ndarray, np.ndarray]:
    """The coupled projections ``(P^{alpha,beta1} q, P^{-alpha,beta2} r)``.

    Cell moments against degree ``k-1`` match those of ``q`` and ``r``; at each
    edge the flux combinations reproduce the point values,

        {Pq} + alpha [Pq] - beta1 [Pr] = q(x_{j+1/2}),
        {Pr} - alpha [Pr] - beta2 [Pq] = r(x_{j+1/2}).

    All ``2 N (k+1)`` conditions are solved as one sparse system.
    """
    if not flux.projection_well_posed:
        raise WellPosednessError(
            "projection pair needs alpha**2 + beta1*beta2 != 0, "
            f"got alpha={flux.alpha}, beta1={flux.beta1}, beta2={flux.beta2}")
    n, m = mesh.n_cells, degree + 1
    size = n * m
    mq = _cell_moments(q, mesh, degree)
    mr = _cell_moments(r, mesh, degree)
    xe = mesh.edges[1:]
    qe = np.broadcast_to(np.asarray(q(xe), dtype=float), (n,))
    re = np.broadcast_to(np.asarray(r(xe), dtype=float), (n,))

    R, L = trace_matrices(mesh, degree)
    a = flux.alpha
    edge_rows = sp.bmat([
        [(0.5 - a) * R + (0.5 + a) * L, -flux.beta1 * (L - R)],
        [-flux.beta2 * (L - R), (0.5 + a) * R + (0.5 - a) * L],
    ], format="csr")
    # moment rows select coefficient (j, l) for l < k
    top = np.arange(n) * m + degree
    is_top = np.zeros(2 * size, dtype=bool)
    is_top[top] = True
    is_top[size + top] = True
    moment_idx = np.flatnonzero(~is_top)
    moment_rows = sp.csr_matrix((np.ones(len(moment_idx)), (moment_idx, moment_idx)),
                                shape=(2 * size, 2 * size))
    # edge condition of edge j replaces the row of coefficient (j, k)
    scatter = sp.csr_matrix((np.ones(2 * n), (np.concatenate([top, size + top]), np.arange(2 * n))),
                            shape=(2 * size, 2 * n))
    system = (moment_rows + scatter @ edge_rows).tocsc()
    rhs = np.concatenate([mq.ravel(), mr.ravel()])
    rhs[top] = qe
    rhs[size + top] = re
    try:
        sol = spla.splu(system).solve(rhs)
    except RuntimeError as exc:
        raise WellPosednessError(f"projection system is singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise WellPosednessError("projection system is singular")
    return sol[:size].reshape(n, m), sol[size:].reshape(n, m)


def projection_interface_residual(pq, pr, q, r, mesh: Mesh1D, flux: FluxParams1D) -> float:
    """Max violation of the edge conditions defining the projection pair."""
    degree = pq.shape[1] - 1
    R, L = trace_matrices(mesh, degree)
    qm, qp = R @ pq.ravel(), L @ pq.ravel()
    rm, rp = R @ pr.ravel(), L @ pr.ravel()
    a = flux.alpha
    xe = mesh.edges[1:]
    res_q = 0.5 * (qm + qp) + a * (qp - qm) - flux.beta1 * (rp - rm) - q(xe)
    res_r = 0.5 * (rm + rp) - a * (rp - rm) - flux.beta2 * (qp - qm) - r(xe)
    return float(max(np.max(np.abs(res_q)), np.max(np.abs(res_r))))


def radau_from_functionals(moments: np.ndarray, edge_values: np.ndarray, mesh: Mesh1D,
                           alpha: float) -> np.ndarray:
    """Generalized Radau projection ``P^{alpha,0}`` from its defining functionals.

    ``moments`` has shape ``(N, k+1, ...)``: the first ``k`` modes are the cell
    moments to preserve (mode ``k`` is ignored).  ``edge_values`` has shape
    ``(N, ...)`` and holds the target value at the right edge of each cell.
    Trailing axes are independent lines solved with one factorization.
    """
    if alpha == 0:
        raise WellPosednessError("generalized Radau projection needs alpha != 0")
    shape = moments.shape
    mom = _as_lines(np.array(moments, dtype=float))
    edge = np.asarray(edge_values, dtype=float).reshape(mom.shape[0], -1)
    n, m, _ = mom.shape
    k = m - 1
    basis = Basis(k)
    s = mesh.scale
    s_next = np.roll(s, -1)
    low_right = s[:, None] * np.einsum("l,jlb->jb", basis.right[:k], mom[:, :k])
    low_left = s[:, None] * np.einsum("l,jlb->jb", basis.left[:k], mom[:, :k])
    rhs = edge - (0.5 - alpha) * low_right - (0.5 + alpha) * np.roll(low_left, -1, axis=0)
    diag = (0.5 - alpha) * s * basis.right[k]
    upper = (0.5 + alpha) * s_next * basis.left[k]
    rows = np.concatenate([np.arange(n), np.arange(n)])
    cols = np.concatenate([np.arange(n), (np.arange(n) + 1) % n])
    mat = sp.csc_matrix((np.concatenate([diag, upper]), (rows, cols)), shape=(n, n))
    try:
        top = spla.splu(mat).solve(rhs)
    except RuntimeError as exc:
        raise WellPosednessError(f"Radau system is singular: {exc}") from exc
    out = mom.copy()
    out[:, k] = top
    return out.reshape(shape)


def radau_project_1d(q, mesh: Mesh1D, degree: int, alpha: float) -> np.ndarray:
    """``P^{alpha,0} q`` for a single smooth function."""
    return radau_from_functionals(_cell_moments(q, mesh, degree),
                                  np.asarray(q(mesh.edges[1:]), dtype=float), mesh, alpha)


def decoupled_projection_1d(q, r, mesh: Mesh1D, degree: int,
                            alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """The ``beta1 = beta2 = 0`` projection pair via two circulant solves.

    Independent of :func:`global_projection_pair_1d`; requires a uniform mesh.
    """
    if not mesh.is_uniform:
        raise ConfigurationError("circulant projection solve needs a uniform mesh")
    if alpha == 0:
        raise WellPosednessError("generalized Radau projection needs alpha != 0")
    n, k = mesh.n_cells, degree
    basis = Basis(k)
    s = mesh.scale[0]
    xe = mesh.edges[1:]

    def one(fn, a):
        coeffs = _cell_moments(fn, mesh, k)
        low_r = s * coeffs[:, :k] @ basis.right[:k]
        low_l = s * coeffs[:, :k] @ basis.left[:k]
        rhs = fn(xe) - (0.5 - a) * low_r - (0.5 + a) * np.roll(low_l, -1)
        col = np.zeros(n)
        col[0] += (0.5 - a) * s * basis.right[k]
        col[-1] += (0.5 + a) * s * basis.left[k]
        coeffs[:, k] = scipy.linalg.solve_circulant(col, rhs)
        return coeffs

    return one(q, alpha), one(r, -alpha)


def initial_state_1d(u0, v0, mesh: Mesh1D, degree: int, flux: FluxParams1D,
                     init: str = "projection") -> State1D:
    """Project exact initial data: ``u -> P^{alpha,beta1}``, ``v -> P^{-alpha,beta2}``, or plain L2."""
    if init == "l2":
        return State1D(mesh, l2_project(u0, mesh, degree), l2_project(v0, mesh, degree))
    if init != "projection":
        raise ConfigurationError(f"unknown initialization {init!r}")
    pu, pv = global_projection_pair_1d(u0, v0, mesh, degree, flux)
    return State1D(mesh, pu, pv)


# -- energy and errors -------------------------------------------------------


def discrete_energy_1d(state: State1D) -> float:
    """``||u_h||**2 + ||v_h||**2`` (orthonormal basis, so a coefficient sum of squares)."""
    return float(np.sum(state.u**2) + np.sum(state.v**2))


def l2_error_1d(state: State1D, exact_u, exact_v) -> tuple[float, float]:
    """L2 errors of ``u_h`` and ``v_h`` against pointwise exact solutions, ``k + 3`` Gauss points."""
    return (l2_norm_error(state.u, state.mesh, exact_u),
            l2_norm_error(state.v, state.mesh, exact_v))
