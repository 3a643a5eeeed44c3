"""Meshes, orthonormal Legendre bases, Gauss quadrature and L2 projection.

Every DG field in the package is stored as modal coefficients against the
L2-orthonormal Legendre basis of each cell,

    phi_j^l(x) = sqrt(2 / h_j) * Ptilde_l(xi),   x = x_j + h_j * xi / 2,

with ``Ptilde_l = sqrt((2l + 1) / 2) * P_l`` orthonormal on [-1, 1].  The mass
matrix is therefore the identity and the squared L2 norm of a field is the
squared Euclidean norm of its coefficient array.

Coefficient layouts:

* 1D: ``(N, k + 1)``, cell-major.
* 2D: ``(Nx, Ny, (k + 1)**2)``, mode index ``lx * (k + 1) + ly``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError

_REF_TOL = 1e-12


def legendre_table(k: int, xi) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of orthonormal Legendre modes 0..k at ``xi``.

    Returns two arrays of shape ``(k + 1,) + np.shape(xi)``.  Points outside
    the reference cell are rejected rather than extrapolated.
    """
    if k < 0:
        raise ConfigurationError(f"degree must be >= 0, got {k}")
    xi = np.asarray(xi, dtype=float)
    if np.any(np.abs(xi) > 1.0 + _REF_TOL):
        raise ConfigurationError("reference coordinate outside [-1, 1]")
    p = np.empty((k + 1,) + xi.shape)
    dp = np.empty_like(p)
    p[0] = 1.0
    dp[0] = 0.0
    if k >= 1:
        p[1] = xi
        dp[1] = 1.0
    for n in range(1, k):
        p[n + 1] = ((2 * n + 1) * xi * p[n] - n * p[n - 1]) / (n + 1)
        dp[n + 1] = dp[n - 1] + (2 * n + 1) * p[n]
    scale = np.sqrt((2 * np.arange(k + 1) + 1) / 2.0)
    scale = scale.reshape((k + 1,) + (1,) * xi.ndim)
    return p * scale, dp * scale


def legendre_eval(l: int, xi):
    """Value and derivative of the ``l``-th orthonormal Legendre polynomial."""
    p, dp = legendre_table(l, xi)
    return p[l], dp[l]


@dataclass(frozen=True)
class Quadrature:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def exact_degree(self) -> int:
        return 2 * len(self.nodes) - 1

    def integrate(self, fn) -> float:
        return float(np.dot(self.weights, fn(self.nodes)))


def gauss_quadrature(m: int) -> Quadrature:
    """``m``-point Gauss-Legendre rule on [-1, 1], exact to degree 2m - 1."""
    if m < 1:
        raise ConfigurationError(f"quadrature needs at least one point, got {m}")
    nodes, weights = np.polynomial.legendre.leggauss(m)
    return Quadrature(nodes, weights)


@dataclass(frozen=True)
class Basis:
    """Orthonormal Legendre basis of degree ``degree`` on the reference cell."""

    degree: int

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigurationError(f"degree must be >= 0, got {self.degree}")

    @property
    def n_modes(self) -> int:
        return self.degree + 1

    def values(self, xi) -> np.ndarray:
        return legendre_table(self.degree, xi)[0]

    def derivatives(self, xi) -> np.ndarray:
        return legendre_table(self.degree, xi)[1]

    @cached_property
    def right(self) -> np.ndarray:
        return self.values(1.0)

    @cached_property
    def left(self) -> np.ndarray:
        return self.values(-1.0)

    @cached_property
    def stiffness(self) -> np.ndarray:
        """``D[m, l] = int_{-1}^{1} Ptilde_l Ptilde_m' dxi``."""
        q = gauss_quadrature(self.degree + 1)
        p, dp = legendre_table(self.degree, q.nodes)
        return (dp * q.weights) @ p.T

    def quadrature(self, extra: int = 1) -> Quadrature:
        return gauss_quadrature(self.degree + 1 + extra)


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Partition of [a, b] into cells ``[edges[j], edges[j + 1]]``."""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or len(edges) < 2:
            raise ConfigurationError("a mesh needs at least two edges")
        if not np.all(np.diff(edges) > 0):
            raise ConfigurationError("mesh edges must be strictly increasing")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def a(self) -> float:
        return float(self.edges[0])

    @property
    def b(self) -> float:
        return float(self.edges[-1])

    @property
    def n_cells(self) -> int:
        return len(self.edges) - 1

    @cached_property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @cached_property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def h(self) -> float:
        return float(self.widths.max())

    @property
    def is_uniform(self) -> bool:
        w = self.widths
        return bool(np.allclose(w, w[0], rtol=1e-12, atol=0.0))

    @cached_property
    def scale(self) -> np.ndarray:
        """``sqrt(2 / h_j)``, the factor between reference and physical modes."""
        return np.sqrt(2.0 / self.widths)

    def points(self, xi) -> np.ndarray:
        """Physical coordinates of reference points ``xi`` in every cell, ``(N, len(xi))``."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return self.centers[:, None] + 0.5 * self.widths[:, None] * xi[None, :]

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Cell index and reference coordinate of physical points ``x``."""
        x = np.asarray(x, dtype=float)
        if np.any(x < self.a - 1e-12) or np.any(x > self.b + 1e-12):
            raise ConfigurationError("point outside the mesh domain")
        j = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.n_cells - 1)
        xi = np.clip(2.0 * (x - self.centers[j]) / self.widths[j], -1.0, 1.0)
        return j, xi

    def __eq__(self, other):
        return isinstance(other, Mesh1D) and np.array_equal(self.edges, other.edges)

    def __hash__(self):
        return hash(self.edges.tobytes())


def build_mesh_1d(a: float, b: float, n: int) -> Mesh1D:
    """Uniform mesh of ``n`` cells on [a, b]."""
    if int(n) != n or n < 1:
        raise ConfigurationError(f"cell count must be a positive integer, got {n}")
    if not b > a:
        raise ConfigurationError(f"degenerate interval [{a}, {b}]")
    edges = np.linspace(a, b, int(n) + 1)
    edges[0], edges[-1] = a, b
    return Mesh1D(edges)


@dataclass(frozen=True)
class TensorMesh2D:
    mesh_x: Mesh1D
    mesh_y: Mesh1D

    @property
    def shape(self) -> tuple[int, int]:
        return self.mesh_x.n_cells, self.mesh_y.n_cells

    @property
    def n_cells(self) -> int:
        return self.mesh_x.n_cells * self.mesh_y.n_cells

    @property
    def h(self) -> float:
        return max(self.mesh_x.h, self.mesh_y.h)


def build_mesh_2d(ax: float, bx: float, nx: int, ay: float, by: float, ny: int) -> TensorMesh2D:
    return TensorMesh2D(build_mesh_1d(ax, bx, nx), build_mesh_1d(ay, by, ny))


# -- 1D fields ---------------------------------------------------------------


def evaluate_on_cells(coeffs: np.ndarray, mesh: Mesh1D, xi) -> np.ndarray:
    """Values of a 1D field at reference points ``xi`` of every cell, ``(N, len(xi))``."""
    k = coeffs.shape[1] - 1
    phi = legendre_table(k, np.atleast_1d(xi))[0]
    return mesh.scale[:, None] * (coeffs @ phi)


def evaluate(coeffs: np.ndarray, mesh: Mesh1D, x) -> np.ndarray:
    """Point values ``sum_l c_j^l phi_j^l(x)`` at arbitrary physical points."""
    x = np.asarray(x, dtype=float)
    j, xi = mesh.locate(x)
    k = coeffs.shape[1] - 1
    phi = legendre_table(k, xi)[0]
    return mesh.scale[j] * np.einsum("...l,l...->...", coeffs[j], phi)


def l2_project(fn, mesh: Mesh1D, degree: int, n_points: int | None = None) -> np.ndarray:
    """L2 projection of ``fn(x)`` onto the piecewise polynomials of ``degree``.

    ``fn`` is called once on an ``(N, n_points)`` array of physical points.
    The rule defaults to ``degree + 2`` points per cell.
    """
    q = gauss_quadrature(degree + 2 if n_points is None else n_points)
    phi = legendre_table(degree, q.nodes)[0]
    vals = np.broadcast_to(np.asarray(fn(mesh.points(q.nodes)), dtype=float),
                           (mesh.n_cells, len(q.nodes)))
    # int f phi_j^l dx = (h_j / 2) sqrt(2 / h_j) sum_q w_q f_q Ptilde_l(xi_q)
    factor = 0.5 * mesh.widths * mesh.scale
    return factor[:, None] * ((vals * q.weights) @ phi.T)


def l2_norm_error(coeffs: np.ndarray, mesh: Mesh1D, exact, n_points: int | None = None) -> float:
    """``||exact - u_h||`` by composite Gauss quadrature (default ``k + 3`` points)."""
    k = coeffs.shape[1] - 1
    q = gauss_quadrature(k + 3 if n_points is None else n_points)
    diff = np.asarray(exact(mesh.points(q.nodes)), dtype=float) - evaluate_on_cells(coeffs, mesh, q.nodes)
    return float(np.sqrt(np.sum(0.5 * mesh.widths[:, None] * q.weights * diff**2)))


# -- 2D fields ---------------------------------------------------------------


def evaluate_on_cells_2d(coeffs: np.ndarray, mesh: TensorMesh2D, xi, eta) -> np.ndarray:
    """Values at the tensor grid ``xi x eta`` of every cell, ``(Nx, Ny, len(xi), len(eta))``."""
    nx, ny = mesh.shape
    k = int(round(np.sqrt(coeffs.shape[2]))) - 1
    c = coeffs.reshape(nx, ny, k + 1, k + 1)
    px = legendre_table(k, np.atleast_1d(xi))[0]
    py = legendre_table(k, np.atleast_1d(eta))[0]
    vals = np.einsum("ijab,ap,bq->ijpq", c, px, py)
    return vals * (mesh.mesh_x.scale[:, None, None, None] * mesh.mesh_y.scale[None, :, None, None])


def grid_points_2d(mesh: TensorMesh2D, xi, eta) -> tuple[np.ndarray, np.ndarray]:
    """Physical coordinates broadcastable to ``(Nx, Ny, len(xi), len(eta))``."""
    px = mesh.mesh_x.points(xi)
    py = mesh.mesh_y.points(eta)
    return px[:, None, :, None], py[None, :, None, :]


def l2_project_2d(fn, mesh: TensorMesh2D, degree: int, n_points: int | None = None) -> np.ndarray:
    """Tensor-quadrature L2 projection of ``fn(x, y)``; default ``(degree + 2)**2`` points."""
    q = gauss_quadrature(degree + 2 if n_points is None else n_points)
    x, y = grid_points_2d(mesh, q.nodes, q.nodes)
    nx, ny = mesh.shape
    vals = np.broadcast_to(np.asarray(fn(x, y), dtype=float), (nx, ny, len(q.nodes), len(q.nodes)))
    return _moments_2d(vals, mesh, degree, q)


def _moments_2d(vals, mesh: TensorMesh2D, degree: int, q: Quadrature) -> np.ndarray:
    phi = legendre_table(degree, q.nodes)[0] * q.weights
    fx = 0.5 * mesh.mesh_x.widths * mesh.mesh_x.scale
    fy = 0.5 * mesh.mesh_y.widths * mesh.mesh_y.scale
    c = np.einsum("ijpq,ap,bq->ijab", vals, phi, phi) * (fx[:, None, None, None] * fy[None, :, None, None])
    nx, ny = mesh.shape
    return c.reshape(nx, ny, (degree + 1) ** 2)


def l2_norm_error_2d(coeffs: np.ndarray, mesh: TensorMesh2D, exact, n_points: int | None = None) -> float:
    k = int(round(np.sqrt(coeffs.shape[2]))) - 1
    q = gauss_quadrature(k + 3 if n_points is None else n_points)
    x, y = grid_points_2d(mesh, q.nodes, q.nodes)
    diff = np.asarray(exact(x, y), dtype=float) - evaluate_on_cells_2d(coeffs, mesh, q.nodes, q.nodes)
    w = np.outer(q.weights, q.weights)
    jac = 0.25 * mesh.mesh_x.widths[:, None] * mesh.mesh_y.widths[None, :]
    return float(np.sqrt(np.sum(jac[:, :, None, None] * w * diff**2)))
