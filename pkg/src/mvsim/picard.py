"""Fixed-point (frozen-flow) iteration for the interacting particle system.

Iteration n simulates the particle system against the statistic flow realized
by iteration n-1, starting from the flow of the initial cloud held constant in
time.  All iterations share one initial cloud and one set of Brownian
increments (common random numbers), so successive iterates differ only through
the frozen flow and the gap between them is a clean contraction signal.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .measures import EmpiricalMeasure, StatisticFlow, empirical_statistics, \
    w2_empirical_1d, w2_sliced
from .particle import InitialLaw, TimeGrid, euler_paths, generate_brownian, \
    initial_states, simulate_interacting


@dataclass
class PicardRun:
    """Outcome of a frozen-flow iteration.

    ``flows[i]`` is the realized statistic flow of inner solve ``i`` (the
    constant initial flow is in ``initial_flow``); ``checkpoint_clouds[i]``
    holds that solve's empirical snapshots at the checkpoint times.  ``gaps``
    has one entry per consecutive pair of solves.
    """

    initial_flow: StatisticFlow
    flows: list[StatisticFlow]
    checkpoint_clouds: list[list[EmpiricalMeasure]]
    checkpoint_times: tuple[float, ...]
    gaps: list[float]
    converged: bool
    n_iters: int
    wall_times: list[float] = field(default_factory=list)

    @property
    def final_flow(self) -> StatisticFlow:
        return self.flows[-1]

    @property
    def final_clouds(self) -> list[EmpiricalMeasure]:
        return self.checkpoint_clouds[-1]


def convergence_gap(a: list[EmpiricalMeasure], b: list[EmpiricalMeasure],
                    n_slices: int = 64, seed: int = 0) -> float:
    """Max over matching checkpoints of W2 (exact in 1D, sliced above)."""
    if len(a) != len(b) or not a:
        raise ValueError("checkpoint lists must be non-empty and equally long")
    worst = 0.0
    for ma, mb in zip(a, b):
        if ma.d != mb.d:
            raise ValueError("checkpoint clouds have mismatched dimensions")
        if ma.d == 1:
            worst = max(worst, w2_empirical_1d(ma, mb))
        else:
            worst = max(worst, w2_sliced(ma, mb, n_slices=n_slices, seed=seed))
    return worst


def picard_run(model, law: InitialLaw, grid: TimeGrid, n: int, seed: int,
               tol: float, max_iters: int,
               checkpoints: tuple[float, ...]) -> PicardRun:
    """Iterate frozen-flow solves until the checkpoint W2 gap drops below tol.

    Stops after the first pair of consecutive solves whose gap is <= ``tol``
    (``converged=True``) or after ``max_iters`` solves (``converged=False``).
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    if max_iters < 2:
        raise ValueError("need at least two inner solves to measure a gap")
    if not checkpoints:
        raise ValueError("need at least one checkpoint time")
    ck_idx = [grid.index_of(t) for t in checkpoints]

    x0 = initial_states(law, n, seed)
    dw = generate_brownian(seed, n, model.m, grid)
    times = grid.times()
    s0 = empirical_statistics(EmpiricalMeasure.from_samples(x0), model.functionals)
    initial_flow = StatisticFlow(times, np.tile(s0, (grid.steps + 1, 1)))

    flows: list[StatisticFlow] = []
    all_clouds: list[list[EmpiricalMeasure]] = []
    gaps: list[float] = []
    walls: list[float] = []
    converged = False
    frozen = initial_flow
    prev_clouds: list[EmpiricalMeasure] | None = None
    for _ in range(max_iters):
        t0 = time.perf_counter()
        bundle = euler_paths(model, x0, grid, dw, flow=frozen, seed=seed)
        walls.append(time.perf_counter() - t0)
        clouds = [bundle.snapshot(k) for k in ck_idx]
        flows.append(bundle.realized_flow)
        all_clouds.append(clouds)
        if prev_clouds is not None:
            gap = convergence_gap(prev_clouds, clouds)
            gaps.append(gap)
            if gap <= tol:
                converged = True
                break
        frozen = bundle.realized_flow
        prev_clouds = clouds
    return PicardRun(initial_flow=initial_flow, flows=flows,
                     checkpoint_clouds=all_clouds,
                     checkpoint_times=tuple(float(t) for t in checkpoints),
                     gaps=gaps, converged=converged, n_iters=len(flows),
                     wall_times=walls)


def picard_vs_direct(model, law: InitialLaw, grid: TimeGrid, n: int, seed: int,
                     tol: float, max_iters: int,
                     checkpoints: tuple[float, ...]) -> float:
    """Sup-over-checkpoints W2 between the converged iterate and the
    interacting system run with the same seed (hence the same noise)."""
    run = picard_run(model, law, grid, n, seed, tol, max_iters, checkpoints)
    direct = simulate_interacting(model, law, grid, n, seed)
    direct_clouds = [direct.snapshot(grid.index_of(t)) for t in checkpoints]
    return convergence_gap(run.final_clouds, direct_clouds)
