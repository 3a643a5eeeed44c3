"""Time integration of ``dX = a(X) dt + b(X) dW`` driven by one scalar Brownian motion.

The strong Taylor 2.0 step is specialised to linear coefficients
``a(X) = A X`` and ``b(X) = B X``; Euler-Maruyama is the baseline and also
handles general (nonlinear) diffusion.

States may carry a trailing batch axis: ``X`` of shape ``(dim, batch)`` with
per-column increments of shape ``(batch,)`` advances ``batch`` independent
paths at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DivergenceError, UnsupportedSchemeError

TAYLOR2 = "taylor2"
EULER = "euler"
SCHEMES = (TAYLOR2, EULER)


@dataclass(frozen=True)
class PathIncrements:
    """One step of Brownian data.

    ``dW = W(t+tau) - W(t)``, ``dZ = int (W_s - W_t) ds`` and
    ``dU = int (W_s - W_t)**2 ds`` over the step.  ``fine_path`` holds the
    sub-increments they were built from (last axis).
    """

    tau: float
    dW: np.ndarray | float
    dZ: np.ndarray | float
    dU: np.ndarray | float
    fine_path: np.ndarray | None = field(default=None, repr=False)


def increments_from_path(sub_increments: np.ndarray, tau: float) -> PathIncrements:
    """Reduce Brownian sub-increments (last axis, ``M`` equal substeps) to one step.

    The auxiliary system ``dx = dv, dy = x ds, dz = x**2 ds`` is integrated
    with the trapezoidal rule on the piecewise-linear path, which keeps
    ``E[dU]`` and ``Cov[dW, dZ]`` exact for any ``M``.
    """
    dw = np.asarray(sub_increments, dtype=float)
    m = dw.shape[-1]
    h = tau / m
    w = np.cumsum(dw, axis=-1)
    w_prev = w - dw
    dW = w[..., -1]
    dZ = h * np.sum(0.5 * (w_prev + w), axis=-1)
    dU = h * np.sum(0.5 * (w_prev**2 + w**2), axis=-1)
    return PathIncrements(tau, dW, dZ, dU, dw)


def sample_increments(tau: float, m: int, rng, size=None) -> PathIncrements:
    """Draw one step's increments from ``m`` Gaussian substeps of variance ``tau / m``."""
    if not tau > 0:
        raise ConfigurationError(f"step size must be positive, got {tau}")
    if m < 1:
        raise ConfigurationError(f"need at least one substep, got {m}")
    shape = (m,) if size is None else tuple(np.atleast_1d(size)) + (m,)
    dw = rng.standard_normal(shape) * np.sqrt(tau / m)
    return increments_from_path(dw, tau)


@dataclass(frozen=True)
class LinearDiffusion:
    """``b(X) = B X``; ``B`` may be a matrix, sparse matrix or scalar."""

    B: object

    @property
    def is_scalar(self) -> bool:
        return np.isscalar(self.B)

    def __call__(self, X, t=0.0):
        return self.B * X if self.is_scalar else self.B @ X


@dataclass(frozen=True)
class SDESystem:
    """Linear drift ``A`` (anything supporting ``@``) and a diffusion.

    ``diffusion`` is a :class:`LinearDiffusion` or a callable ``b(X, t)``.
    """

    dim: int
    drift: object
    diffusion: LinearDiffusion | Callable

    def a(self, X):
        return self.drift @ X

    def b(self, X, t=0.0):
        return self.diffusion(X, t)

    @property
    def linear_diffusion(self) -> bool:
        return isinstance(self.diffusion, LinearDiffusion)


def taylor2_step(X, sys: SDESystem, inc: PathIncrements):
    """Strong order 2.0 Taylor step for ``a(X) = A X``, ``b(X) = B X``.

    For linear coefficients the generator compositions are plain operator
    products (``L0 a = A^2 X``, ``L1 a = A B X``, ``L0 b = B A X``,
    ``L1 b = B^2 X``, ``L1 L1 b = B^3 X``, ``L1 L0 b = B A B X``,
    ``L1 L1 a = A B^2 X``, ``L0 L1 b = B^2 A X``, ``L1 L1 L1 b = B^4 X``);
    second-derivative parts of ``L0`` vanish.
    """
    if not sys.linear_diffusion:
        raise UnsupportedSchemeError(
            "Taylor 2.0 is implemented for linear diffusion only; use the Euler-Maruyama scheme")
    tau, dW, dZ, dU = inc.tau, inc.dW, inc.dZ, inc.dU
    A = sys.drift
    c_b = dW
    c_bb = 0.5 * (dW**2 - tau)
    c_aa = 0.5 * tau**2
    c_ba = dW * tau - dZ          # L0 b
    c_ab = dZ                     # L1 a
    c_bbb = (dW**2 - 3 * tau) * dW / 6
    c_bab = -dU + dW * dZ         # L1 L0 b
    c_abb = 0.5 * dU - 0.25 * tau**2
    c_bba = 0.5 * dU - dW * dZ + 0.5 * dW**2 * tau - 0.25 * tau**2
    c_bbbb = (dW**4 - 6 * dW**2 * tau + 3 * tau**2) / 24

    if sys.diffusion.is_scalar:
        # B = c I commutes with A: collect the expansion on X, AX and A^2 X
        c = sys.diffusion.B
        s0 = 1 + c * c_b + c**2 * c_bb + c**3 * c_bbb + c**4 * c_bbbb
        s1 = tau + c * (c_ba + c_ab) + c**2 * (c_bab + c_abb + c_bba)
        AX = A @ X
        return s0 * X + s1 * AX + c_aa * (A @ AX)

    B = sys.diffusion.B
    AX = A @ X
    BX = B @ X
    AAX = A @ AX
    ABX = A @ BX
    BAX = B @ AX
    BBX = B @ BX
    BBBX = B @ BBX
    BABX = B @ ABX
    ABBX = A @ BBX
    BBAX = B @ BAX
    BBBBX = B @ BBBX
    return (X + tau * AX + c_b * BX + c_bb * BBX + c_aa * AAX + c_ba * BAX + c_ab * ABX
            + c_bbb * BBBX + c_bab * BABX + c_abb * ABBX + c_bba * BBAX + c_bbbb * BBBBX)


def euler_maruyama_step(X, sys: SDESystem, inc: PathIncrements, t: float = 0.0):
    return X + inc.tau * sys.a(X) + inc.dW * sys.b(X, t)


_STEPPERS = {
    TAYLOR2: lambda X, sys, inc, t: taylor2_step(X, sys, inc),
    EULER: euler_maruyama_step,
}


def get_stepper(scheme: str):
    try:
        return _STEPPERS[scheme]
    except KeyError:
        raise ConfigurationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}") from None


def integrate_increments(X0, sys: SDESystem, increments, scheme: str = TAYLOR2,
                         t0: float = 0.0, observer=None, keep_trajectory: bool = False):
    """Advance ``X0`` through a sequence of :class:`PathIncrements`.

    ``observer(n, t, X)`` is called after every step (and once for ``n = 0``).
    Returns the final state, or the list of all states if ``keep_trajectory``.
    """
    step = get_stepper(scheme)
    X = np.array(X0, dtype=float)
    t = t0
    traj = [X] if keep_trajectory else None
    if observer is not None:
        observer(0, t, X)
    for n, inc in enumerate(increments, start=1):
        with np.errstate(over="ignore", invalid="ignore"):
            X = step(X, sys, inc, t)
        t = t0 + n * inc.tau
        if not np.all(np.isfinite(X)):
            raise DivergenceError(f"non-finite state after step {n} (t={t:.6g})", step=n)
        if keep_trajectory:
            traj.append(X)
        if observer is not None:
            observer(n, t, X)
    return traj if keep_trajectory else X


def integrate_path(X0, sys: SDESystem, T: float, n_steps: int, scheme: str = TAYLOR2,
                   rng=None, substeps: int = 100):
    """Integrate to time ``T`` with ``n_steps`` uniform steps.

    Returns ``(trajectory, W)`` where ``trajectory`` has ``n_steps + 1`` states
    and ``W[n]`` is the realized Brownian value at ``t_n`` (``W[0] = 0``).
    """
    if n_steps < 1:
        raise ConfigurationError(f"need at least one step, got {n_steps}")
    if not T > 0:
        raise ConfigurationError(f"final time must be positive, got {T}")
    rng = np.random.default_rng() if rng is None else rng
    tau = T / n_steps
    incs = [sample_increments(tau, substeps, rng) for _ in range(n_steps)]
    traj = integrate_increments(X0, sys, incs, scheme, keep_trajectory=True)
    W = np.concatenate([[0.0], np.cumsum([inc.dW for inc in incs])])
    return np.array(traj), W


def coarsen_path(sub_increments: np.ndarray, n_steps: int, tau: float) -> list[PathIncrements]:
    """Split a fine Brownian path (last axis) into ``n_steps`` equal steps of length ``tau``."""
    dw = np.asarray(sub_increments)
    total = dw.shape[-1]
    if total % n_steps:
        raise ConfigurationError(f"{total} sub-increments do not split into {n_steps} steps")
    per = total // n_steps
    blocks = dw.reshape(dw.shape[:-1] + (n_steps, per))
    return [increments_from_path(blocks[..., n, :], tau) for n in range(n_steps)]


def gbm_strong_errors(drift: float = 0.5, vol: float = 0.5, x0: float = 1.0, T: float = 1.0,
                      levels=(16, 32, 64, 128, 256), samples: int = 1000, substeps: int = 4,
                      seed: int = 0) -> dict:
    """Strong errors of both schemes on geometric Brownian motion.

    All levels share one fine path per sample; the exact solution
    ``x0 exp((drift - vol**2/2) T + vol W_T)`` is evaluated on that path.
    Returns ``{"levels", "tau", "taylor2", "euler", "slope_taylor2", "slope_euler"}``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    finest = max(levels)
    fine = rng.standard_normal((samples, finest * substeps)) * np.sqrt(T / (finest * substeps))
    W_T = fine.sum(axis=1)
    exact = x0 * np.exp((drift - 0.5 * vol**2) * T + vol * W_T)
    sys = SDESystem(1, np.array([[drift]]), LinearDiffusion(vol))
    out = {"levels": list(levels), "tau": [T / n for n in levels]}
    for scheme in SCHEMES:
        errs = []
        for n in levels:
            incs = coarsen_path(fine, n, T / n)
            X = integrate_increments(np.full((1, samples), x0), sys, incs, scheme)
            errs.append(float(np.sqrt(np.mean((X[0] - exact) ** 2))))
        out[scheme] = errs
        out[f"slope_{scheme}"] = float(-np.polyfit(np.log(levels), np.log(errs), 1)[0])
    return out
