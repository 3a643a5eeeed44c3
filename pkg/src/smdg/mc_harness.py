"""Monte Carlo driver: per-sample simulation, RMS errors, convergence tables and
averaged energy histories.

Sample ``i`` of a run with root seed ``s`` draws all of its Brownian data from
``Generator(Philox(SeedSequence(s, spawn_key=(i,))))``.  Samples are advanced
in fixed chunks (``chunk_size``) so serial and threaded runs perform the same
floating-point operations and give identical results.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import dg1d, dg2d
from .errors import ConfigurationError, DivergenceError, UnsupportedSchemeError, WellPosednessError
from .mesh_basis import build_mesh_1d, build_mesh_2d, l2_norm_error, l2_norm_error_2d
from .sde_taylor import (EULER, SCHEMES, TAYLOR2, LinearDiffusion, PathIncrements, SDESystem,
                         get_stepper, increments_from_path)

TWO_PI = 2.0 * np.pi


# -- problems ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Problem:
    """A manufactured test case.

    ``initial`` holds the t=0 fields.  ``exact(t, W)`` returns the pointwise
    exact fields at time ``t`` on the Brownian path with ``W_t = W``.
    """

    name: str
    dimension: int
    domain: tuple
    initial: tuple
    exact: Callable
    noise: object
    field_names: tuple


def _maxwell1d(noisy: bool) -> Problem:
    def exact(t, W):
        amp = math.exp(W - 0.5 * t) if noisy else 1.0
        return (lambda x: (np.sin(x - t) - np.cos(x + t)) * amp,
                lambda x: (np.sin(x - t) + np.cos(x + t)) * amp)

    noise = dg1d.NoiseSpec1D.linear(np.eye(2)) if noisy else dg1d.NoiseSpec1D.zero()
    return Problem("maxwell1d" if noisy else "maxwell1d-deterministic", 1, (0.0, TWO_PI),
                   exact(0.0, 0.0), exact, noise, ("u", "v"))


def _maxwell2d(noisy: bool) -> Problem:
    # S and T are assigned so that the fields solve dE = (T_x - S_y) dt + ...,
    # dS = -E_y dt + ..., dT = E_x dt + ...
    def exact(t, W):
        amp = math.exp(W - 0.5 * t) if noisy else 1.0
        return (lambda x, y: (np.sin(x + t) - np.cos(y + t)) * amp,
                lambda x, y: np.cos(y + t) * amp + 0 * x,
                lambda x, y: np.sin(x + t) * amp + 0 * y)

    noise = dg2d.NoiseSpec2D.linear(np.eye(3)) if noisy else dg2d.NoiseSpec2D.zero()
    return Problem("maxwell2d" if noisy else "maxwell2d-deterministic", 2, (0.0, TWO_PI, 0.0, TWO_PI),
                   exact(0.0, 0.0), exact, noise, ("E", "S", "T"))


PROBLEMS = {
    "maxwell1d": lambda: _maxwell1d(True),
    "maxwell1d-deterministic": lambda: _maxwell1d(False),
    "maxwell2d": lambda: _maxwell2d(True),
    "maxwell2d-deterministic": lambda: _maxwell2d(False),
}


_REGISTERED: dict[str, Problem] = {}


def register_problem(problem: Problem) -> None:
    """Make a user-supplied problem available to :class:`ExperimentConfig` by name."""
    if problem.name in PROBLEMS:
        raise ConfigurationError(f"{problem.name!r} is a built-in problem")
    if problem.dimension not in (1, 2):
        raise ConfigurationError("problems must be 1D or 2D")
    _REGISTERED[problem.name] = problem
    build_discretization.cache_clear()


def get_problem(name: str) -> Problem:
    if name in _REGISTERED:
        return _REGISTERED[name]
    try:
        return _builtin_problem(name)
    except KeyError:
        known = sorted(PROBLEMS) + sorted(_REGISTERED)
        raise ConfigurationError(f"unknown problem {name!r}; choose from {known}") from None


@lru_cache(maxsize=None)
def _builtin_problem(name: str) -> Problem:
    return PROBLEMS[name]()


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.  ``alpha`` is the 1D flux parameter or the 2D ``alpha1``."""

    problem: str = "maxwell1d"
    dimension: int | None = None
    nx: int = 20
    ny: int | None = None
    degree: int = 1
    alpha: float = 0.5
    alpha2: float = 0.5
    beta1: float = 0.0
    beta2: float = 0.0
    final_time: float = 0.5
    nt: int = 200
    samples: int | None = None
    root_seed: int = 1
    scheme: str = TAYLOR2
    substeps: int = 100
    path_resolution: int | None = None
    init: str = "projection"
    chunk_size: int = 32

    def __post_init__(self):
        prob = self.get_problem()
        if self.dimension is None:
            object.__setattr__(self, "dimension", prob.dimension)
        if self.dimension != prob.dimension:
            raise ConfigurationError(f"problem {prob.name!r} is {prob.dimension}D, config says {self.dimension}D")
        if self.ny is None:
            object.__setattr__(self, "ny", self.nx)
        if self.samples is None:
            object.__setattr__(self, "samples", 200 if self.dimension == 1 else 100)
        for name in ("nx", "ny", "nt", "samples", "substeps", "chunk_size"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {val}")
        if self.path_resolution is not None:
            r = self.path_resolution
            if int(r) != r or r < 1 or r % self.nt:
                raise ConfigurationError(f"path_resolution must be a positive multiple of nt={self.nt}, got {r}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise ConfigurationError(f"degree must be a non-negative integer, got {self.degree}")
        if not self.final_time > 0:
            raise ConfigurationError(f"final_time must be positive, got {self.final_time}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.init not in ("projection", "l2"):
            raise ConfigurationError(f"init must be 'projection' or 'l2', got {self.init!r}")
        if self.root_seed < 0:
            raise ConfigurationError("root_seed must be non-negative")
        if self.dimension == 1:
            flux = self.flux()
            if self.init == "projection" and not flux.projection_well_posed:
                raise WellPosednessError(
                    "projection initialization needs alpha**2 + beta1*beta2 != 0 "
                    f"(alpha={self.alpha}, beta1={self.beta1}, beta2={self.beta2})")
        else:
            if self.beta1 or self.beta2:
                raise ConfigurationError("the 2D scheme has no beta flux terms")
            self.flux()

    def get_problem(self) -> Problem:
        return get_problem(self.problem)

    def flux(self):
        if self.dimension == 1:
            return dg1d.FluxParams1D(self.alpha, self.beta1, self.beta2)
        return dg2d.FluxParams2D(self.alpha, self.alpha2)

    @property
    def tau(self) -> float:
        return self.final_time / self.nt

    @property
    def fine_steps(self) -> int:
        """Number of Brownian sub-increments drawn per sample over [0, T]."""
        return self.nt * self.substeps if self.path_resolution is None else self.path_resolution

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- discretization ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Discretization:
    """Everything shared by the samples of one configuration."""

    config: ExperimentConfig
    problem: Problem
    mesh: object
    system: SDESystem
    X0: np.ndarray
    n_fields: int

    def split(self, X: np.ndarray) -> list[np.ndarray]:
        """Per-field coefficient arrays of a stacked state (no batch axis)."""
        n = X.shape[0] // self.n_fields
        k1 = self.config.degree + 1
        if self.problem.dimension == 1:
            shape = (self.mesh.n_cells, k1)
        else:
            shape = self.mesh.shape + (k1 * k1,)
        return [X[i * n:(i + 1) * n].reshape(shape) for i in range(self.n_fields)]

    def errors(self, X: np.ndarray, t: float, W: float) -> tuple[float, ...]:
        exact = self.problem.exact(t, W)
        norm = l2_norm_error if self.problem.dimension == 1 else l2_norm_error_2d
        return tuple(norm(c, self.mesh, fn) for c, fn in zip(self.split(X), exact))

    @property
    def diffusion_scale(self) -> float | None:
        """``c`` when the projected noise is ``c`` times the state, else ``None``."""
        d = self.system.diffusion
        if isinstance(d, LinearDiffusion) and d.is_scalar:
            return float(d.B)
        return None


def _batched_noise(problem: Problem, mesh, degree: int, make_state, assemble):
    def b(X, t=0.0):
        cols = X[:, None] if X.ndim == 1 else X
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            state = make_state(mesh, cols[:, j], t)
            out[:, j] = np.concatenate([a.ravel() for a in assemble(state, problem.noise)])
        return out[:, 0] if X.ndim == 1 else out

    return b


@lru_cache(maxsize=16)
def build_discretization(config: ExperimentConfig) -> Discretization:
    prob = config.get_problem()
    k = config.degree
    if prob.dimension == 1:
        mesh = build_mesh_1d(prob.domain[0], prob.domain[1], config.nx)
        A = dg1d.drift_matrix_1d(mesh, k, config.flux())
        state0 = dg1d.initial_state_1d(*prob.initial, mesh, k, config.flux(), config.init)
        B = dg1d.noise_matrix_1d(mesh, k, prob.noise)
        make_state, assemble = dg1d.State1D.from_stacked, dg1d.assemble_noise_1d
        n_fields = 2
    else:
        ax, bx, ay, by = prob.domain
        mesh = build_mesh_2d(ax, bx, config.nx, ay, by, config.ny)
        A = dg2d.drift_matrix_2d(mesh, k, config.flux())
        state0 = dg2d.initial_state_2d(*prob.initial, mesh, k, config.flux(), config.init)
        B = dg2d.noise_matrix_2d(mesh, k, prob.noise)
        make_state, assemble = dg2d.State2D.from_stacked, dg2d.assemble_noise_2d
        n_fields = 3
    if B is not None:
        diffusion = LinearDiffusion(B)
    elif config.scheme == EULER:
        diffusion = _batched_noise(prob, mesh, k, make_state, assemble)
    else:
        raise UnsupportedSchemeError("Taylor 2.0 needs linear noise; use scheme='euler' for general noise")
    X0 = state0.stacked()
    return Discretization(config, prob, mesh, SDESystem(len(X0), A, diffusion), X0, n_fields)


# -- sampling ------------------------------------------------------------------


def sample_rng(root_seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for sample ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(root_seed, spawn_key=(index,))))


class ZeroRNG:
    """Stand-in generator whose Gaussian draws are all zero (W identically 0)."""

    def standard_normal(self, size=None):
        return np.zeros(size)


@dataclass
class SampleResult:
    index: int
    errors: tuple
    times: np.ndarray
    energy: np.ndarray
    W_T: float
    final_state: np.ndarray | None = field(default=None, repr=False)


def _path_increments(config: ExperimentConfig, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    total = config.fine_steps
    dw = rng.standard_normal((config.nt, total // config.nt)) * math.sqrt(config.final_time / total)
    inc = increments_from_path(dw, config.tau)
    return inc.dW, inc.dZ, inc.dU


def _column_energy(X: np.ndarray) -> np.ndarray:
    # reduce along contiguous rows so a column's sum does not depend on the batch width
    return np.sum(np.ascontiguousarray(X.T) ** 2, axis=1)


def run_batch(config: ExperimentConfig, indices, rng_factory=None,
              keep_state: bool = False) -> list[SampleResult]:
    """Advance the samples ``indices`` together and return their results in order."""
    disc = build_discretization(config)
    rng_factory = sample_rng if rng_factory is None else rng_factory
    indices = list(indices)
    incs = [_path_increments(config, rng_factory(config.root_seed, i)) for i in indices]
    dW = np.stack([c[0] for c in incs], axis=1)
    dZ = np.stack([c[1] for c in incs], axis=1)
    dU = np.stack([c[2] for c in incs], axis=1)
    tau = config.tau
    step = get_stepper(config.scheme)
    X = np.repeat(disc.X0[:, None], len(indices), axis=1)
    energy = np.empty((config.nt + 1, len(indices)))
    energy[0] = _column_energy(X)
    for n in range(config.nt):
        with np.errstate(over="ignore", invalid="ignore"):
            X = step(X, disc.system, PathIncrements(tau, dW[n], dZ[n], dU[n]), n * tau)
            energy[n + 1] = _column_energy(X)
        bad = ~np.isfinite(energy[n + 1])
        if bad.any():
            i = indices[int(np.argmax(bad))]
            raise DivergenceError(
                f"sample {i} (root_seed={config.root_seed}) diverged at step {n + 1}",
                step=n + 1, sample_index=i, seed=config.root_seed)
    times = tau * np.arange(config.nt + 1)
    W_T = [float(np.sum(c[0])) for c in incs]
    cols = np.ascontiguousarray(X.T)
    return [SampleResult(i, disc.errors(cols[c], config.final_time, W_T[c]), times, energy[:, c].copy(),
                         W_T[c], cols[c].copy() if keep_state else None)
            for c, i in enumerate(indices)]


def run_sample(config: ExperimentConfig, sample_index: int, rng_factory=None,
               keep_state: bool = False) -> SampleResult:
    """Simulate one sample.  Results do not depend on how samples are batched."""
    return run_batch(config, [sample_index], rng_factory, keep_state)[0]


# -- aggregation -------------------------------------------------------------


def rms(errors) -> float:
    return float(np.sqrt(np.mean(np.square(errors))))


def bootstrap_se(errors, seed: int, n_boot: int = 200) -> float:
    """Bootstrap standard error of ``rms(errors)``."""
    errors = np.asarray(errors, dtype=float)
    if len(errors) < 2:
        return 0.0
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(2**31,))))
    idx = rng.integers(0, len(errors), size=(n_boot, len(errors)))
    return float(np.std(np.sqrt(np.mean(errors[idx] ** 2, axis=1)), ddof=1))


@dataclass
class MonteCarloResult:
    config: ExperimentConfig
    field_names: tuple
    errors: np.ndarray          # (samples, fields)
    times: np.ndarray
    energies: np.ndarray        # (samples, nt + 1)
    W_T: np.ndarray
    seeds: list

    @property
    def rms(self) -> dict:
        return {f: rms(self.errors[:, i]) for i, f in enumerate(self.field_names)}

    @property
    def rms_se(self) -> dict:
        return {f: bootstrap_se(self.errors[:, i], self.config.root_seed)
                for i, f in enumerate(self.field_names)}

    @property
    def mean_energy(self) -> np.ndarray:
        return np.mean(self.energies, axis=0)


def _chunks(n: int, size: int):
    return [range(s, min(s + size, n)) for s in range(0, n, size)]


def monte_carlo(config: ExperimentConfig, threads: int = 1, rng_factory=None) -> MonteCarloResult:
    """Run all samples; results are reduced in sample order regardless of ``threads``."""
    chunks = _chunks(config.samples, config.chunk_size)
    build_discretization(config)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: run_batch(config, c, rng_factory), chunks))
    else:
        parts = [run_batch(config, c, rng_factory) for c in chunks]
    results = [r for part in parts for r in part]
    prob = config.get_problem()
    return MonteCarloResult(
        config=config,
        field_names=prob.field_names,
        errors=np.array([r.errors for r in results]),
        times=results[0].times,
        energies=np.array([r.energy for r in results]),
        W_T=np.array([r.W_T for r in results]),
        seeds=[(config.root_seed, r.index) for r in results],
    )


# -- reports -------------------------------------------------------------------


def fmt(x: float) -> str:
    """Fixed scientific notation, 6 significant digits."""
    return f"{x:.5e}"


@dataclass
class ConvergenceReport:
    dimension: int
    field_names: tuple
    levels: list                # [(nx, ny, nt), ...]
    rms: dict                   # field -> list per level
    rms_se: dict
    samples: int
    root_seed: int

    @property
    def rates(self) -> dict:
        """``log2(e_l / e_{l+1})`` between consecutive levels."""
        return {f: [math.log2(a / b) for a, b in zip(v[:-1], v[1:])] for f, v in self.rms.items()}

    def header(self) -> list[str]:
        cols = ["Nx", "Nt"] if self.dimension == 1 else ["Nx", "Ny", "Nt"]
        for f in self.field_names:
            cols += [f"rms_e_{f}", f"rate_{f}"]
        return cols

    def rows(self, with_se: bool = False) -> list[list[str]]:
        rates = self.rates
        out = []
        for i, (nx, ny, nt) in enumerate(self.levels):
            row = [str(nx), str(nt)] if self.dimension == 1 else [str(nx), str(ny), str(nt)]
            for f in self.field_names:
                row.append(fmt(self.rms[f][i]))
                row.append(fmt(self.rms_se[f][i]) if with_se else ("" if i == 0 else fmt(rates[f][i - 1])))
            out.append(row)
        return out

    def to_csv(self) -> str:
        return "\n".join([",".join(self.header())] + [",".join(r) for r in self.rows()]) + "\n"

    def se_csv(self) -> str:
        """Bootstrap standard errors of the RMS entries (not part of the paper's tables)."""
        head = self.header()[:2 if self.dimension == 1 else 3]
        for f in self.field_names:
            head += [f"rms_e_{f}", f"se_{f}"]
        return "\n".join([",".join(head)] + [",".join(r) for r in self.rows(with_se=True)]) + "\n"


def convergence_study(config: ExperimentConfig, levels, threads: int = 1,
                      rng_factory=None, shared_path: bool = True) -> ConvergenceReport:
    """Refinement table over ``levels``.

    Each level is an ``nx`` (``ny = nx`` in 2D, ``nt`` scaled in proportion to
    ``config.nt / config.nx``) or an explicit ``(nx, nt)`` pair.

    With ``shared_path`` every level drives sample ``i`` with the same fine
    Brownian path (at least ``substeps`` sub-increments per step of the finest
    level), so the levels are coupled and Monte Carlo noise largely cancels
    in the rates.  Each level's RMS error is still an ordinary estimate.
    """
    levels = list(levels)
    if len(levels) < 2:
        raise ConfigurationError("a convergence study needs at least two levels")
    ladder = []
    for lev in levels:
        if isinstance(lev, (tuple, list)):
            nx, nt = lev
        else:
            nx = lev
            nt = config.nt * lev / config.nx
            if nt != int(nt):
                raise ConfigurationError(f"Nt for Nx={lev} is not an integer ({nt})")
        ladder.append((int(nx), int(nt)))
    resolution = None
    if shared_path:
        common = math.lcm(*(nt for _, nt in ladder))
        resolution = common * math.ceil(max(nt for _, nt in ladder) * config.substeps / common)
    prob = config.get_problem()
    rms_vals = {f: [] for f in prob.field_names}
    se_vals = {f: [] for f in prob.field_names}
    done = []
    for nx, nt in ladder:
        cfg = config.replace(nx=nx, ny=nx, nt=nt, path_resolution=resolution)
        res = monte_carlo(cfg, threads=threads, rng_factory=rng_factory)
        done.append((cfg.nx, cfg.ny, cfg.nt))
        for f in prob.field_names:
            rms_vals[f].append(res.rms[f])
            se_vals[f].append(res.rms_se[f])
        build_discretization.cache_clear()
    return ConvergenceReport(prob.dimension, prob.field_names, done, rms_vals, se_vals,
                             config.samples, config.root_seed)


@dataclass
class EnergyHistory:
    times: np.ndarray
    mean_energy: np.ndarray
    reference: np.ndarray | None
    samples: int
    root_seed: int
    energies: np.ndarray = field(repr=False, default=None)

    def to_csv(self) -> str:
        lines = ["t,mean_energy,reference"]
        for i, t in enumerate(self.times):
            ref = fmt(self.reference[i]) if self.reference is not None else "nan"
            lines.append(f"{fmt(t)},{fmt(self.mean_energy[i])},{ref}")
        return "\n".join(lines) + "\n"


def energy_history(config: ExperimentConfig, threads: int = 1, rng_factory=None,
                   result: MonteCarloResult | None = None) -> EnergyHistory:
    """Sample-averaged discrete energy at every step.

    When the projected noise is ``c`` times the state the semi-discrete
    energy law gives ``E||X_t||**2 = ||X_0||**2 exp(c**2 t)`` for energy
    conserving fluxes (an upper bound when ``beta1, beta2 > 0``); that curve
    is returned as ``reference``.
    """
    res = monte_carlo(config, threads, rng_factory) if result is None else result
    disc = build_discretization(config)
    c = disc.diffusion_scale
    ref = None
    if c is not None:
        ref = float(np.sum(disc.X0**2)) * np.exp(c * c * res.times)
    return EnergyHistory(res.times, res.mean_energy, ref, config.samples, config.root_seed, res.energies)
