"""DG scheme on periodic rectangular meshes for the 2D stochastic Maxwell system

    dE - T_x dt + S_y dt = f dW,
    dS + E_y dt          = g dW,
    dT - E_x dt          = r dW,

with the fluxes ``q_hat = {q} + a [q]``, ``a`` in ``{+-alpha1, +-alpha2}``.

Fields are ``(Nx, Ny, (k+1)**2)`` coefficient arrays, mode ``lx * (k+1) + ly``.
The stacked state is ``[E.ravel(), S.ravel(), T.ravel()]``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .dg1d import flux_form, flux_form_matrix, radau_from_functionals
from .errors import ConfigurationError, StructureError, WellPosednessError
from .mesh_basis import (TensorMesh2D, evaluate_on_cells_2d, gauss_quadrature, grid_points_2d,
                         l2_norm_error_2d, l2_project_2d, legendre_table)


@dataclass(frozen=True)
class FluxParams2D:
    alpha1: float = 0.5
    alpha2: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.alpha1) and np.isfinite(self.alpha2)):
            raise ConfigurationError("flux parameters must be finite")

    @property
    def projection_well_posed(self) -> bool:
        return self.alpha1 != 0 and self.alpha2 != 0


@dataclass
class State2D:
    mesh: TensorMesh2D
    E: np.ndarray
    S: np.ndarray
    T: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.E, self.S, self.T = (np.asarray(a, dtype=float) for a in (self.E, self.S, self.T))
        if not (self.E.shape == self.S.shape == self.T.shape) or self.E.ndim != 3:
            raise StructureError("E, S, T must share shape (Nx, Ny, (k+1)**2)")
        if self.E.shape[:2] != self.mesh.shape:
            raise StructureError(f"fields have {self.E.shape[:2]} cells, mesh has {self.mesh.shape}")
        k1 = int(round(np.sqrt(self.E.shape[2])))
        if k1 * k1 != self.E.shape[2]:
            raise StructureError("mode axis must have (k+1)**2 entries")

    @property
    def degree(self) -> int:
        return int(round(np.sqrt(self.E.shape[2]))) - 1

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.E.ravel(), self.S.ravel(), self.T.ravel()])

    @classmethod
    def from_stacked(cls, mesh: TensorMesh2D, x: np.ndarray, t: float = 0.0) -> "State2D":
        n = x.shape[0] // 3
        shape = mesh.shape + (n // mesh.n_cells,)
        return cls(mesh, x[:n].reshape(shape), x[n:2 * n].reshape(shape), x[2 * n:].reshape(shape), t)


@dataclass(frozen=True)
class NoiseSpec2D:
    """Noise coefficients ``f, g, r`` called as ``fn(x, y, t, E, S, T)``.

    ``coupling`` (3x3) marks noise linear in ``(E, S, T)`` with constant
    coefficients; row order is ``(f, g, r)``.
    """

    f: Callable
    g: Callable
    r: Callable
    coupling: np.ndarray | None = field(default=None)

    @classmethod
    def linear(cls, coupling) -> "NoiseSpec2D":
        c = np.array(coupling, dtype=float)
        if c.shape != (3, 3):
            raise ConfigurationError("2D coupling must be a 3x3 matrix")
        c.setflags(write=False)

        def row(i):
            return lambda x, y, t, E, S, T: c[i, 0] * E + c[i, 1] * S + c[i, 2] * T

        return cls(f=row(0), g=row(1), r=row(2), coupling=c)

    @classmethod
    def zero(cls) -> "NoiseSpec2D":
        return cls.linear(np.zeros((3, 3)))

    @property
    def is_linear(self) -> bool:
        return self.coupling is not None

    def functions(self):
        return self.f, self.g, self.r


# -- drift ---------------------------------------------------------------


def _modes(a: np.ndarray) -> np.ndarray:
    nx, ny, m2 = a.shape
    k1 = int(round(np.sqrt(m2)))
    return a.reshape(nx, ny, k1, k1)


def _x_form(p, alpha, mesh: TensorMesh2D):
    """``int_J A_I(p, phi; alpha) dy`` for all test functions."""
    c = _modes(p).transpose(0, 2, 1, 3)
    out = flux_form(c, alpha, mesh.mesh_x).transpose(0, 2, 1, 3)
    return out.reshape(p.shape)


def _y_form(p, alpha, mesh: TensorMesh2D):
    """``int_I A_J(p, phi; alpha) dx`` for all test functions."""
    c = _modes(p).transpose(1, 3, 0, 2)
    out = flux_form(c, alpha, mesh.mesh_y).transpose(2, 0, 3, 1)
    return out.reshape(p.shape)


def assemble_drift_2d(state: State2D, flux: FluxParams2D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mesh, a1, a2 = state.mesh, flux.alpha1, flux.alpha2
    dE = -_x_form(state.T, a1, mesh) + _y_form(state.S, -a2, mesh)
    dS = _y_form(state.E, a2, mesh)
    dT = -_x_form(state.E, -a1, mesh)
    return dE, dS, dT


def _tensor_permutation(nx: int, ny: int, m: int) -> sp.csr_matrix:
    """Permutation from ``(i, lx, j, ly)`` ordering to the field layout ``(i, j, lx, ly)``."""
    i, lx, j, ly = np.meshgrid(np.arange(nx), np.arange(m), np.arange(ny), np.arange(m), indexing="ij")
    pos_a = (((i * m + lx) * ny + j) * m + ly).ravel()
    pos_b = (((i * ny + j) * m + lx) * m + ly).ravel()
    n = nx * ny * m * m
    return sp.csr_matrix((np.ones(n), (pos_b, pos_a)), shape=(n, n))


def drift_matrix_2d(mesh: TensorMesh2D, degree: int, flux: FluxParams2D) -> sp.csr_matrix:
    """Sparse drift operator on stacked ``[E; S; T]`` built from 1D Kronecker factors."""
    nx, ny = mesh.shape
    m = degree + 1
    P = _tensor_permutation(nx, ny, m)
    eye_x = sp.identity(nx * m, format="csr")
    eye_y = sp.identity(ny * m, format="csr")

    def gx(alpha):
        return P @ sp.kron(flux_form_matrix(mesh.mesh_x, degree, alpha), eye_y) @ P.T

    def gy(alpha):
        return P @ sp.kron(eye_x, flux_form_matrix(mesh.mesh_y, degree, alpha)) @ P.T

    a1, a2 = flux.alpha1, flux.alpha2
    return sp.bmat([[None, gy(-a2), -gx(a1)],
                    [gy(a2), None, None],
                    [-gx(-a1), None, None]], format="csr")


# -- noise ---------------------------------------------------------------


def assemble_noise_2d(state: State2D, noise: NoiseSpec2D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(P(f), P(g), P(r))`` on the numerical solution, ``(k+2)**2`` points per cell."""
    mesh, k = state.mesh, state.degree
    q = gauss_quadrature(k + 2)
    x, y = grid_points_2d(mesh, q.nodes, q.nodes)
    vals = [evaluate_on_cells_2d(a, mesh, q.nodes, q.nodes) for a in (state.E, state.S, state.T)]
    return tuple(l2_project_2d(lambda _x, _y, fn=fn: fn(x, y, state.t, *vals), mesh, k, n_points=k + 2)
                 for fn in noise.functions())


def noise_matrix_2d(mesh: TensorMesh2D, degree: int, noise: NoiseSpec2D):
    """``B`` for linear noise; a float when the coupling is a multiple of the identity."""
    if noise.coupling is None:
        return None
    c = noise.coupling
    if np.allclose(c, c[0, 0] * np.eye(3), rtol=0, atol=0):
        return float(c[0, 0])
    n = mesh.n_cells * (degree + 1) ** 2
    return sp.kron(sp.csr_matrix(c), sp.identity(n), format="csr")


# -- projections -----------------------------------------------------------


def _functional_matrix(mesh_1d, degree: int, radau: bool, nodes, weights) -> np.ndarray:
    """Per-cell functionals on samples ``[quadrature nodes..., right edge]``.

    Rows are moments against modes ``0..k``; for a Radau direction row ``k`` is
    replaced by the point value at the right edge.  Shape ``(N, k+1, m+1)``.
    """
    n = mesh_1d.n_cells
    phi = legendre_table(degree, nodes)[0] * weights
    factor = 0.5 * mesh_1d.widths * mesh_1d.scale
    W = np.zeros((n, degree + 1, len(nodes) + 1))
    W[:, :, :-1] = factor[:, None, None] * phi[None]
    if radau:
        W[:, degree, :] = 0.0
        W[:, degree, -1] = 1.0
    return W


def radau_projection_2d(fn, mesh: TensorMesh2D, degree: int,
                        alpha_x: float | None = None, alpha_y: float | None = None) -> np.ndarray:
    """Tensor projection of ``fn(x, y)`` with generalized Radau or L2 factors.

    ``alpha_x`` / ``alpha_y`` select ``P^{alpha,0}`` in that direction; ``None``
    means the L2 projection.  So ``(a, None)`` is ``P_x^a``, ``(None, b)`` is
    ``P_y^b`` and ``(a, b)`` is ``P^{a,b}``.
    """
    for name, a in (("alpha_x", alpha_x), ("alpha_y", alpha_y)):
        if a is not None and a == 0:
            raise WellPosednessError(f"Radau projection needs nonzero {name}")
    q = gauss_quadrature(degree + 2)
    samples = np.append(q.nodes, 1.0)
    x, y = grid_points_2d(mesh, samples, samples)
    nx, ny = mesh.shape
    vals = np.broadcast_to(np.asarray(fn(x, y), dtype=float), (nx, ny, len(samples), len(samples)))
    Wx = _functional_matrix(mesh.mesh_x, degree, alpha_x is not None, q.nodes, q.weights)
    Wy = _functional_matrix(mesh.mesh_y, degree, alpha_y is not None, q.nodes, q.weights)
    F = np.einsum("ijpq,iap,jbq->ijab", vals, Wx, Wy)
    if alpha_x is not None:
        lines = F.transpose(0, 2, 1, 3)
        F = radau_from_functionals(lines, lines[:, degree], mesh.mesh_x, alpha_x).transpose(0, 2, 1, 3)
    if alpha_y is not None:
        lines = F.transpose(1, 3, 0, 2)
        F = radau_from_functionals(lines, lines[:, degree], mesh.mesh_y, alpha_y).transpose(2, 0, 3, 1)
    return np.ascontiguousarray(F).reshape(nx, ny, (degree + 1) ** 2)


def initial_state_2d(E0, S0, T0, mesh: TensorMesh2D, degree: int, flux: FluxParams2D,
                     init: str = "projection") -> State2D:
    """``E -> P^{-alpha1,alpha2}``, ``S -> P_y^{-alpha2}``, ``T -> P_x^{alpha1}`` (or plain L2).

    With a zero flux parameter the Radau projections are undefined; the
    affected fields fall back to L2 projection with a warning.
    """
    if init == "l2":
        return State2D(mesh, *(l2_project_2d(f, mesh, degree) for f in (E0, S0, T0)))
    if init != "projection":
        raise ConfigurationError(f"unknown initialization {init!r}")
    a1, a2 = flux.alpha1, flux.alpha2
    if not flux.projection_well_posed:
        warnings.warn("zero 2D flux parameter: Radau initialization replaced by L2 projection "
                      "in that direction", stacklevel=2)
    ax_e = -a1 if a1 != 0 else None
    ay_e = a2 if a2 != 0 else None
    E = radau_projection_2d(E0, mesh, degree, ax_e, ay_e)
    S = radau_projection_2d(S0, mesh, degree, None, -a2 if a2 != 0 else None)
    T = radau_projection_2d(T0, mesh, degree, a1 if a1 != 0 else None, None)
    return State2D(mesh, E, S, T)


def superconvergence_functional(w, mesh: TensorMesh2D, degree: int, alpha: float, beta: float,
                                direction: str = "x") -> np.ndarray:
    """Riesz representer of ``phi -> sum_{i,j} int_J A_I(eps, phi; alpha) dy``.

    ``eps = P^{alpha,beta} w - w``.  The returned ``(Nx, Ny, (k+1)**2)`` array
    ``g`` satisfies ``functional(phi) = <g, coeffs(phi)>``, so ``||g||`` is the
    supremum over unit-norm test functions.  ``direction="y"`` gives the
    ``A_J`` counterpart with parameter ``beta``.
    """
    if direction == "y":
        swapped = TensorMesh2D(mesh.mesh_y, mesh.mesh_x)
        g = superconvergence_functional(lambda x, y: w(y, x), swapped, degree, beta, alpha, "x")
        nx, ny = mesh.shape
        m = degree + 1
        return g.reshape(ny, nx, m, m).transpose(1, 0, 3, 2).reshape(nx, ny, m * m)
    if direction != "x":
        raise ConfigurationError(f"direction must be 'x' or 'y', got {direction!r}")
    proj = radau_projection_2d(w, mesh, degree, alpha, beta)
    mx, my = mesh.mesh_x, mesh.mesh_y
    nx, ny = mesh.shape
    m = degree + 1
    q = gauss_quadrature(degree + 4)
    x, y = grid_points_2d(mesh, q.nodes, q.nodes)
    eps = evaluate_on_cells_2d(proj, mesh, q.nodes, q.nodes) - np.asarray(w(x, y), dtype=float)
    p, dp = legendre_table(degree, q.nodes)
    # volume term: int int eps d/dx(phi_lx) phi_ly
    dphi_x = (mx.scale * 2.0 / mx.widths)[:, None, None] * dp[None]
    phi_y = my.scale[:, None, None] * p[None]
    jac = 0.25 * mx.widths[:, None] * my.widths[None, :]
    vol = np.einsum("ijpq,iap,jbq,p,q->ijab", eps, dphi_x, phi_y, q.weights, q.weights) * jac[:, :, None, None]
    # edge term along x = x_{i+1/2}
    yq = my.points(q.nodes)
    minus = evaluate_on_cells_2d(proj, mesh, [1.0], q.nodes)[:, :, 0, :]
    plus = np.roll(evaluate_on_cells_2d(proj, mesh, [-1.0], q.nodes)[:, :, 0, :], -1, axis=0)
    w_edge = np.asarray(w(mx.edges[1:][:, None, None], yq[None, :, :]), dtype=float)
    eps_hat = 0.5 * (minus + plus) + alpha * (plus - minus) - w_edge
    edge_int = np.einsum("ijq,jbq,q->ijb", eps_hat, phi_y, q.weights) * (0.5 * my.widths)[None, :, None]
    right = mx.scale[:, None] * legendre_table(degree, 1.0)[0][None, :]
    left = mx.scale[:, None] * legendre_table(degree, -1.0)[0][None, :]
    edge = (-edge_int[:, :, None, :] * right[:, None, :, None]
            + np.roll(edge_int, 1, axis=0)[:, :, None, :] * left[:, None, :, None])
    return (vol + edge).reshape(nx, ny, m * m)


# -- energy and errors -------------------------------------------------------


def discrete_energy_2d(state: State2D) -> float:
    return float(np.sum(state.E**2) + np.sum(state.S**2) + np.sum(state.T**2))


def l2_error_2d(state: State2D, exact_E, exact_S, exact_T) -> tuple[float, float, float]:
    """Per-field L2 errors with ``(k+3)**2`` Gauss points per cell."""
    return tuple(l2_norm_error_2d(c, state.mesh, fn)
                 for c, fn in ((state.E, exact_E), (state.S, exact_S), (state.T, exact_T)))
