"""Interacting particle systems driven by Euler-Maruyama.

Noise is generated from counter-based streams, one per particle: particle
``i`` under master seed ``seed`` always sees the stream keyed ``(seed, i)``,
so output is bitwise reproducible for identical ``(seed, n, m, grid)`` no
matter how work is split across workers.  The initial-condition stream uses a
key outside the particle range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SimulationError
from .measures import EmpiricalMeasure, StatisticFlow

# stream id for initial-condition sampling; particle ids stay below 2**63
_INIT_STREAM = np.uint64(1) << np.uint64(63)
_MAX_SEED = (1 << 63) - 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with ``steps`` Euler steps."""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 1:
            raise ValueError(f"need at least one step, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def index_of(self, time: float) -> int:
        """Grid index of a time that must coincide with a node."""
        k = int(round(time / self.dt))
        if k < 0 or k > self.steps or abs(k * self.dt - time) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"time {time} is not a node of {self}")
        return k

    def halved(self) -> "TimeGrid":
        return TimeGrid(self.horizon, 2 * self.steps)


@dataclass(frozen=True)
class InitialLaw:
    """Initial condition: a point mass or a Gaussian."""

    kind: str
    mean: np.ndarray
    cov: np.ndarray | None = None

    @classmethod
    def point(cls, x0) -> "InitialLaw":
        return cls("point", np.atleast_1d(np.asarray(x0, dtype=float)))

    @classmethod
    def gaussian(cls, mean, cov) -> "InitialLaw":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match dimension {mean.size}")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        return cls("gaussian", mean, cov)

    @property
    def d(self) -> int:
        return self.mean.size


def _check_seed(seed: int) -> np.uint64:
    if not 0 <= int(seed) <= _MAX_SEED:
        raise ValueError(f"seed must lie in [0, 2**63), got {seed}")
    return np.uint64(seed)


def particle_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for one particle's noise."""
    key = np.array([_check_seed(seed), np.uint64(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generate_brownian(seed: int, n_particles: int, m: int, grid: TimeGrid) -> np.ndarray:
    """Brownian increments, shape (steps, n_particles, m), each N(0, dt)."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if m < 1:
        raise ValueError("noise dimension must be >= 1")
    _check_seed(seed)
    out = np.empty((grid.steps, n_particles, m))
    for i in range(n_particles):
        out[:, i, :] = particle_stream(seed, i).standard_normal((grid.steps, m))
    out *= math.sqrt(grid.dt)
    return out


def coarsen_increments(increments: np.ndarray) -> np.ndarray:
    """Sum adjacent step pairs: the same Brownian path on a grid half as fine."""
    M = increments.shape[0]
    if M % 2 != 0:
        raise ValueError("refinement pairing needs an even number of steps")
    return increments[0::2] + increments[1::2]


def initial_states(law: InitialLaw, n: int, seed: int) -> np.ndarray:
    """Sample the initial cloud, shape (n, d), from a dedicated stream."""
    if n < 1:
        raise ValueError("need at least one particle")
    if law.kind == "point":
        return np.tile(law.mean, (n, 1))
    key = np.array([_check_seed(seed), _INIT_STREAM], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    z = rng.standard_normal((n, law.d))
    try:
        chol = np.linalg.cholesky(law.cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("initial covariance is not positive definite") from exc
    return law.mean + z @ chol.T


@dataclass
class ParticlePath:
    """One trajectory with its own increments, extracted from a bundle."""

    grid: TimeGrid
    states: np.ndarray      # (steps + 1, d)
    increments: np.ndarray  # (steps, m)
    index: int


@dataclass
class PathBundle:
    """Simulated ensemble: states (steps+1, n, d), increments (steps, n, m).

    ``realized_flow`` holds the statistics of the simulated cloud at every
    grid time, computed with the same reduction as ``empirical_statistics``.
    """

    grid: TimeGrid
    states: np.ndarray
    increments: np.ndarray
    seed: int
    realized_flow: StatisticFlow

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def snapshot(self, time_index: int) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_samples(self.states[time_index])

    def path(self, i: int) -> ParticlePath:
        return ParticlePath(self.grid, self.states[:, i, :].copy(),
                            self.increments[:, i, :].copy(), i)


def _stats_of(points: np.ndarray, weights: np.ndarray, functionals) -> np.ndarray:
    out = np.empty(len(functionals))
    for k, f in enumerate(functionals):
        out[k] = float(np.dot(weights, np.asarray(f.phi(points), dtype=float)))
    return out


def euler_paths(model, x0: np.ndarray, grid: TimeGrid, increments: np.ndarray,
                flow: StatisticFlow | None = None, seed: int = 0) -> PathBundle:
    """Core Euler-Maruyama sweep over a particle block.

    With ``flow=None`` the statistic vector is read off the live cloud each
    step (interacting system); otherwise it is read from ``flow`` at matching
    time indices (frozen-flow system).  Both modes share this code path, so
    for models with no statistic dependence they produce bitwise identical
    states.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    if d != model.d:
        raise ValueError(f"initial states have dimension {d}, model expects {model.d}")
    if increments.shape != (grid.steps, n, model.m):
        raise ValueError(
            f"increments shape {increments.shape}, expected {(grid.steps, n, model.m)}")
    times = grid.times()
    if flow is not None:
        if flow.stats.shape != (grid.steps + 1, model.q):
            raise ValueError(
                f"flow shape {flow.stats.shape} does not match grid/model "
                f"{(grid.steps + 1, model.q)}")
        if not np.allclose(flow.times, times, rtol=0.0, atol=1e-12):
            raise ValueError("flow is defined on a different time grid")

    dt = grid.dt
    uw = np.full(n, 1.0 / n)
    states = np.empty((grid.steps + 1, n, d))
    realized = np.empty((grid.steps + 1, model.q))
    x = x0.copy()
    states[0] = x
    for k in range(grid.steps):
        realized[k] = _stats_of(x, uw, model.functionals)
        s = flow.stats[k] if flow is not None else realized[k]
        t = float(times[k])
        drift = model.b(t, x, s)
        sig = model.sigma(t, x, s)
        x = x + drift * dt + np.einsum("ndm,nm->nd", sig, increments[k])
        bad = ~np.isfinite(x)
        if bad.any():
            i = int(np.argwhere(bad.any(axis=1))[0, 0])
            raise SimulationError(
                f"state became non-finite at step {k + 1}, particle {i}",
                step=k + 1, particle=i)
        states[k + 1] = x
    realized[grid.steps] = _stats_of(x, uw, model.functionals)
    return PathBundle(grid=grid, states=states, increments=increments, seed=seed,
                      realized_flow=StatisticFlow(times, realized))


def simulate_interacting(model, law: InitialLaw, grid: TimeGrid,
                         n: int, seed: int) -> PathBundle:
    """Interacting particle system: statistics read off the live cloud."""
    if law.d != model.d:
        raise ValueError(f"initial law dimension {law.d}, model expects {model.d}")
    x0 = initial_states(law, n, seed)
    dw = generate_brownian(seed, n, model.m, grid)
    return euler_paths(model, x0, grid, dw, flow=None, seed=seed)


def simulate_frozen_flow(model, law: InitialLaw, grid: TimeGrid, n: int,
                         seed: int, flow: StatisticFlow) -> PathBundle:
    """Particle system against a prescribed statistic flow (no interaction)."""
    if law.d != model.d:
        raise ValueError(f"initial law dimension {law.d}, model expects {model.d}")
    x0 = initial_states(law, n, seed)
    dw = generate_brownian(seed, n, model.m, grid)
    return euler_paths(model, x0, grid, dw, flow=flow, seed=seed)


def moment_curve(bundle: PathBundle, p: float) -> np.ndarray:
    """Mean of ||X_t||^p over the ensemble at every grid time."""
    if p <= 0:
        raise ValueError(f"moment order must be positive, got {p}")
    out = np.empty(bundle.grid.steps + 1)
    for k in range(out.size):
        r = np.sqrt(np.sum(bundle.states[k] ** 2, axis=1))
        out[k] = float(np.mean(r ** p))
    return out


def trajectories_to_csv(bundle: PathBundle, path, particle_indices=None) -> None:
    """Long-format trajectory dump: t, particle, x1[, x2, ...]."""
    idx = range(bundle.n) if particle_indices is None else particle_indices
    times = bundle.grid.times()
    cols = ",".join(f"x{i + 1}" for i in range(bundle.states.shape[2]))
    lines = [f"t,particle,{cols}"]
    for i in idx:
        for k, t in enumerate(times):
            vals = ",".join(repr(float(v)) for v in bundle.states[k, i])
            lines.append(f"{repr(float(t))},{i},{vals}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
