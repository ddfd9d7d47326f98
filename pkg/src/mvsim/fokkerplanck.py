"""Finite-difference solver for the forward (Fokker-Planck) equation.

The density equation is always derived from the SDE coefficients,

    dp/dt = - sum_i d_i(b_i p) + 1/2 sum_ij d_i d_j(A_ij p),   A = sigma sigma^T,

with the statistic vector s recomputed from the evolving density each step, so
the nonlocal coupling is carried through the drift/diffusion fields.

Scheme: explicit Euler in time; conservative flux-form advection with
first-order upwinding by the sign of the interface velocity; centered second
differences of the products A_ii p; centered mixed differences of A_12 p for
the 2D cross term; Dirichlet zero ghost values outside the box.  Every
operator telescopes over the grid, so the mass lost per step equals a sum of
boundary terms which is tracked as cumulative boundary flux; mass plus flux
staying at 1 is a live consistency check of the implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientModel
from .errors import ConservationError, NumericError, PositivityError, StabilityError
from .measures import GridAxis, GridDensity, grid_statistics, trapezoid_weights
from .particle import InitialLaw

# tolerances of the stepping loop
_POSITIVITY_FLOOR = -1e-3
_CONSERVATION_TOL = 1e-4
_SNAPSHOT_MASS_TOL = 1e-2
_MAX_STEPS = 50_000_000


@dataclass(frozen=True)
class FPProblem:
    """A density evolution problem on a fixed box.

    ``dt`` is either the string ``"auto"`` (step size from the stability
    bound each step, with a 0.9 safety factor) or a fixed positive float that
    is checked against the bound before every step.
    """

    model: CoefficientModel
    axes: tuple[GridAxis, ...]
    p0: GridDensity
    horizon: float
    dt: float | str = "auto"
    snapshot_times: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.axes) not in (1, 2):
            raise ValueError("only 1D and 2D problems are supported")
        if len(self.axes) != self.model.d:
            raise ValueError(
                f"grid dimension {len(self.axes)} does not match model dimension {self.model.d}")
        if self.p0.axes != tuple(self.axes):
            raise ValueError("initial density lives on a different grid")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if isinstance(self.dt, str):
            if self.dt != "auto":
                raise ValueError(f"dt policy must be 'auto' or a float, got {self.dt!r}")
        elif not self.dt > 0:
            raise ValueError(f"fixed dt must be positive, got {self.dt}")
        for t in self.snapshot_times:
            if not 0.0 <= t <= self.horizon + 1e-12:
                raise ValueError(f"snapshot time {t} outside [0, {self.horizon}]")


@dataclass
class FPSolution:
    """Solver output: snapshots plus per-step accounting curves."""

    snapshots: list[GridDensity]
    snapshot_times: tuple[float, ...]
    times: np.ndarray
    mass_curve: np.ndarray
    min_value_curve: np.ndarray
    boundary_flux_curve: np.ndarray
    stat_curve: np.ndarray
    n_steps: int


def gaussian_on_grid(law: InitialLaw, axes: tuple[GridAxis, ...]) -> GridDensity:
    """Discretize a Gaussian initial law, normalized to unit trapezoid mass.

    The box must contain at least six standard deviations around the mean in
    every coordinate; point laws have no density and are rejected.
    """
    if law.kind != "gaussian":
        raise ValueError(
            "density evolution needs a Gaussian initial law (a point mass has no grid density)")
    d = len(axes)
    if law.d != d:
        raise ValueError(f"initial law dimension {law.d} does not match grid dimension {d}")
    cov = np.atleast_2d(law.cov)
    for i, ax in enumerate(axes):
        sd = math.sqrt(float(cov[i, i]))
        if law.mean[i] - 6 * sd < ax.lo or law.mean[i] + 6 * sd > ax.hi:
            raise ValueError(
                f"axis {i} box [{ax.lo}, {ax.hi}] does not cover six standard "
                f"deviations around the initial mean {law.mean[i]}")
    if d == 1:
        x = axes[0].nodes()
        var = float(cov[0, 0])
        vals = np.exp(-0.5 * (x - law.mean[0]) ** 2 / var) / math.sqrt(2 * math.pi * var)
        weights = trapezoid_weights(axes[0])
    else:
        xx, yy = np.meshgrid(axes[0].nodes(), axes[1].nodes(), indexing="ij")
        diff = np.stack([xx - law.mean[0], yy - law.mean[1]], axis=-1)
        prec = np.linalg.inv(cov)
        quad = np.einsum("...i,ij,...j->...", diff, prec, diff)
        vals = np.exp(-0.5 * quad) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
        weights = np.outer(trapezoid_weights(axes[0]), trapezoid_weights(axes[1]))
    vals = vals / float((weights * vals).sum())
    return GridDensity(tuple(axes), vals, time=0.0, mass_tol=1e-9)


def build_fp_problem(model: CoefficientModel, law: InitialLaw,
                     domain: tuple[tuple[float, float], ...],
                     nodes: tuple[int, ...], horizon: float,
                     snapshot_times: tuple[float, ...] = (),
                     dt: float | str = "auto") -> FPProblem:
    """Convenience constructor: box + node counts + Gaussian initial law."""
    if len(domain) != len(nodes):
        raise ValueError("domain and nodes describe different dimensions")
    axes = tuple(GridAxis(float(lo), float(hi), int(n))
                 for (lo, hi), n in zip(domain, nodes))
    p0 = gaussian_on_grid(law, axes)
    if not snapshot_times:
        snapshot_times = (float(horizon),)
    return FPProblem(model=model, axes=axes, p0=p0, horizon=float(horizon),
                     dt=dt, snapshot_times=tuple(sorted(set(float(t) for t in snapshot_times))))


def _eval_fields(model: CoefficientModel, t: float, coords: np.ndarray,
                 grid_shape: tuple[int, ...], s: np.ndarray):
    """Drift and diffusion-matrix fields on flattened node coordinates."""
    d = model.d
    b = np.asarray(model.b(t, coords, s), dtype=float).reshape(grid_shape + (d,))
    sig = np.asarray(model.sigma(t, coords, s), dtype=float)
    a = np.einsum("...ik,...jk->...ij", sig, sig).reshape(grid_shape + (d, d))
    return b, 0.5 * (a + np.swapaxes(a, -1, -2))


def derive_fp_coefficients(model: CoefficientModel, t: float,
                           axes: tuple[GridAxis, ...],
                           p: GridDensity) -> tuple[np.ndarray, np.ndarray]:
    """Drift field (grid..., d) and diffusion-matrix field (grid..., d, d)
    entering the derived forward equation at time t, with s taken from p."""
    if p.axes != tuple(axes):
        raise ValueError("density lives on a different grid than the requested axes")
    s = grid_statistics(p, model.functionals)
    shape = tuple(ax.n for ax in axes)
    return _eval_fields(model, t, p.node_coords(), shape, s)


class _Recorder:
    """Growable float buffer for per-step curves."""

    def __init__(self, cap: int = 4096):
        self._a = np.empty(cap)
        self._n = 0

    def push(self, v: float) -> None:
        if self._n == self._a.size:
            self._a = np.concatenate([self._a, np.empty(self._a.size)])
        self._a[self._n] = v
        self._n += 1

    def data(self) -> np.ndarray:
        return self._a[:self._n].copy()


def _plan_events(problem: FPProblem) -> list[float]:
    events = sorted(set(float(t) for t in problem.snapshot_times if t > 0.0))
    if not events or events[-1] < problem.horizon:
        events.append(float(problem.horizon))
    return events


def solve_fp(problem: FPProblem) -> FPSolution:
    """March the density to the horizon, recording snapshots and accounting.

    Raises
    ------
    StabilityError
        if a fixed dt exceeds the stability limit (checked before stepping),
        or the automatic step size collapses.
    PositivityError
        if the density undershoots below -1e-3 (values are never clamped).
    ConservationError
        if mass drifts from 1 by more than 1e-4 net of boundary flux.
    NumericError
        if the density stops being finite.
    """
    if len(problem.axes) == 1:
        return _solve_1d(problem)
    return _solve_2d(problem)


def _statistic_rows(model: CoefficientModel, dens: GridDensity) -> np.ndarray:
    """Rows r_k with s_k = r_k . p.ravel(): trapezoid weights times phi."""
    w = dens.node_weights().ravel()
    coords = dens.node_coords()
    return np.array([w * np.asarray(f.phi(coords), dtype=float)
                     for f in model.functionals]).reshape(model.q, w.size)


def _solve_1d(problem: FPProblem) -> FPSolution:
    model = problem.model
    ax = problem.axes[0]
    n, dx = ax.n, ax.spacing
    coords = ax.nodes()[:, None]
    p = problem.p0.values.copy()
    phi_rows = _statistic_rows(model, problem.p0)
    fixed_dt = None if problem.dt == "auto" else float(problem.dt)

    s = phi_rows @ p if model.q else np.zeros(0)
    b_cache = a_cache = None
    if model.b_static:
        b_cache = np.asarray(model.b(0.0, coords, s), dtype=float).reshape(n)
    if model.sigma_static:
        sig = np.asarray(model.sigma(0.0, coords, s), dtype=float).reshape(n, 1, 1)
        a_cache = (sig[:, 0, 0] ** 2)

    events = _plan_events(problem)
    snapshots: list[GridDensity] = []
    snap_times: list[float] = []
    want_zero = any(t == 0.0 for t in problem.snapshot_times)
    if want_zero:
        snapshots.append(GridDensity((ax,), p.copy(), time=0.0,
                                     mass_tol=_SNAPSHOT_MASS_TOL))
        snap_times.append(0.0)
    snap_set = set(float(t) for t in problem.snapshot_times)

    rec_t, rec_mass, rec_min, rec_flux = _Recorder(), _Recorder(), _Recorder(), _Recorder()
    rec_stats: list[np.ndarray] = []
    mass = float(p.sum() * dx)
    rec_t.push(0.0)
    rec_mass.push(mass)
    rec_min.push(float(p.min()))
    rec_flux.push(0.0)
    if model.q:
        rec_stats.append(s.copy())

    t = 0.0
    flux_cum = 0.0
    ev_i = 0
    steps = 0
    while ev_i < len(events):
        target = events[ev_i]
        if model.q:
            s = phi_rows @ p
        b = b_cache if b_cache is not None else \
            np.asarray(model.b(t, coords, s), dtype=float).reshape(n)
        a = a_cache
        if a is None:
            sig = np.asarray(model.sigma(t, coords, s), dtype=float).reshape(n, 1, 1)
            a = sig[:, 0, 0] ** 2

        denom = 2.0 * float(a.max()) / dx ** 2 + float(np.abs(b).max()) / dx
        if denom <= 0:
            dt = target - t
        else:
            limit = 1.0 / denom
            if fixed_dt is not None:
                if fixed_dt > limit * (1 + 1e-12):
                    raise StabilityError(
                        f"fixed dt {fixed_dt} exceeds stability limit {limit:.3e} at t={t:.6g}")
                dt = fixed_dt
            else:
                dt = 0.9 * limit
        if dt <= 1e-15:
            raise StabilityError(f"step size collapsed to {dt} at t={t:.6g}")
        hit = False
        if t + dt >= target - 1e-15:
            dt = target - t
            hit = True

        w = a * p
        bf = 0.5 * (b[:-1] + b[1:])
        F = np.maximum(bf, 0.0) * p[:-1] + np.minimum(bf, 0.0) * p[1:]
        f_left = min(b[0], 0.0) * p[0]
        f_right = max(b[-1], 0.0) * p[-1]
        upd = np.empty(n)
        upd[0] = f_left - F[0]
        upd[1:-1] = F[:-1] - F[1:]
        upd[-1] = F[-1] - f_right
        upd /= dx
        half_dx2 = 0.5 / dx ** 2
        upd[0] += half_dx2 * (w[1] - 2.0 * w[0])
        upd[1:-1] += half_dx2 * (w[2:] - 2.0 * w[1:-1] + w[:-2])
        upd[-1] += half_dx2 * (w[-2] - 2.0 * w[-1])

        outflux = (f_right - f_left) + (w[0] + w[-1]) / (2.0 * dx)

        p += dt * upd
        flux_cum += dt * outflux
        t = target if hit else t + dt
        steps += 1

        if not np.all(np.isfinite(p)):
            raise NumericError(f"density became non-finite at t={t:.6g} (step {steps})")
        mass = float(p.sum() * dx)
        pmin = float(p.min())
        if pmin < _POSITIVITY_FLOOR:
            raise PositivityError(
                f"density undershot to {pmin:.3e} at t={t:.6g} (step {steps})")
        if abs(mass + flux_cum - 1.0) > _CONSERVATION_TOL:
            raise ConservationError(
                f"mass {mass:.8f} plus boundary flux {flux_cum:.8f} drifted from 1 "
                f"at t={t:.6g} (step {steps})")
        rec_t.push(t)
        rec_mass.push(mass)
        rec_min.push(pmin)
        rec_flux.push(flux_cum)
        if model.q:
            rec_stats.append((phi_rows @ p).copy())
        if steps > _MAX_STEPS:
            raise StabilityError(f"exceeded {_MAX_STEPS} steps before the horizon")

        if hit:
            if target in snap_set:
                snapshots.append(GridDensity((ax,), p.copy(), time=target,
                                             mass_tol=_SNAPSHOT_MASS_TOL))
                snap_times.append(target)
            ev_i += 1

    stat_curve = np.array(rec_stats) if rec_stats else np.zeros((steps + 1, 0))
    return FPSolution(snapshots=snapshots, snapshot_times=tuple(snap_times),
                      times=rec_t.data(), mass_curve=rec_mass.data(),
                      min_value_curve=rec_min.data(),
                      boundary_flux_curve=rec_flux.data(),
                      stat_curve=stat_curve, n_steps=steps)


def _solve_2d(problem: FPProblem) -> FPSolution:
    model = problem.model
    ax1, ax2 = problem.axes
    n1, n2 = ax1.n, ax2.n
    dx, dy = ax1.spacing, ax2.spacing
    shape = (n1, n2)
    dens0 = problem.p0
    coords = dens0.node_coords()
    p = dens0.values.copy()
    phi_rows = _statistic_rows(model, dens0)
    fixed_dt = None if problem.dt == "auto" else float(problem.dt)

    s = phi_rows @ p.ravel() if model.q else np.zeros(0)
    b_cache = a_cache = None
    if model.b_static:
        b_cache = np.asarray(model.b(0.0, coords, s), dtype=float).reshape(n1, n2, 2)
    if model.sigma_static:
        sig = np.asarray(model.sigma(0.0, coords, s), dtype=float)
        a = np.einsum("...ik,...jk->...ij", sig, sig).reshape(n1, n2, 2, 2)
        a_cache = 0.5 * (a + np.swapaxes(a, -1, -2))

    events = _plan_events(problem)
    snapshots: list[GridDensity] = []
    snap_times: list[float] = []
    if any(t == 0.0 for t in problem.snapshot_times):
        snapshots.append(GridDensity((ax1, ax2), p.copy(), time=0.0,
                                     mass_tol=_SNAPSHOT_MASS_TOL))
        snap_times.append(0.0)
    snap_set = set(float(t) for t in problem.snapshot_times)

    rec_t, rec_mass, rec_min, rec_flux = _Recorder(), _Recorder(), _Recorder(), _Recorder()
    rec_stats: list[np.ndarray] = []
    cell = dx * dy
    mass = float(p.sum() * cell)
    rec_t.push(0.0)
    rec_mass.push(mass)
    rec_min.push(float(p.min()))
    rec_flux.push(0.0)
    if model.q:
        rec_stats.append(s.copy())

    t = 0.0
    flux_cum = 0.0
    ev_i = 0
    steps = 0
    while ev_i < len(events):
        target = events[ev_i]
        if model.q:
            s = phi_rows @ p.ravel()
        if b_cache is not None:
            b = b_cache
        else:
            b = np.asarray(model.b(t, coords, s), dtype=float).reshape(n1, n2, 2)
        if a_cache is not None:
            a = a_cache
        else:
            sig = np.asarray(model.sigma(t, coords, s), dtype=float)
            a = np.einsum("...ik,...jk->...ij", sig, sig).reshape(n1, n2, 2, 2)
            a = 0.5 * (a + np.swapaxes(a, -1, -2))
        b1, b2 = b[:, :, 0], b[:, :, 1]
        a11, a22, a12 = a[:, :, 0, 0], a[:, :, 1, 1], a[:, :, 0, 1]

        denom = (2.0 * float(a11.max()) / dx ** 2
                 + 2.0 * float(a22.max()) / dy ** 2
                 + 2.0 * float(np.abs(a12).max()) / (dx * dy)
                 + float(np.abs(b1).max()) / dx
                 + float(np.abs(b2).max()) / dy)
        if denom <= 0:
            dt = target - t
        else:
            limit = 1.0 / denom
            if fixed_dt is not None:
                if fixed_dt > limit * (1 + 1e-12):
                    raise StabilityError(
                        f"fixed dt {fixed_dt} exceeds stability limit {limit:.3e} at t={t:.6g}")
                dt = fixed_dt
            else:
                dt = 0.9 * limit
        if dt <= 1e-15:
            raise StabilityError(f"step size collapsed to {dt} at t={t:.6g}")
        hit = False
        if t + dt >= target - 1e-15:
            dt = target - t
            hit = True

        upd = np.zeros(shape)

        # advection along x
        bfx = 0.5 * (b1[:-1, :] + b1[1:, :])
        Fx = np.maximum(bfx, 0.0) * p[:-1, :] + np.minimum(bfx, 0.0) * p[1:, :]
        f_top = np.minimum(b1[0, :], 0.0) * p[0, :]
        f_bot = np.maximum(b1[-1, :], 0.0) * p[-1, :]
        upd[0, :] += (f_top - Fx[0, :]) / dx
        upd[1:-1, :] += (Fx[:-1, :] - Fx[1:, :]) / dx
        upd[-1, :] += (Fx[-1, :] - f_bot) / dx
        out_adv_x = float((f_bot - f_top).sum() * dy)

        # advection along y
        bfy = 0.5 * (b2[:, :-1] + b2[:, 1:])
        Fy = np.maximum(bfy, 0.0) * p[:, :-1] + np.minimum(bfy, 0.0) * p[:, 1:]
        f_lef = np.minimum(b2[:, 0], 0.0) * p[:, 0]
        f_rig = np.maximum(b2[:, -1], 0.0) * p[:, -1]
        upd[:, 0] += (f_lef - Fy[:, 0]) / dy
        upd[:, 1:-1] += (Fy[:, :-1] - Fy[:, 1:]) / dy
        upd[:, -1] += (Fy[:, -1] - f_rig) / dy
        out_adv_y = float((f_rig - f_lef).sum() * dx)

        # diagonal diffusion
        wxx = a11 * p
        upd[0, :] += 0.5 * (wxx[1, :] - 2.0 * wxx[0, :]) / dx ** 2
        upd[1:-1, :] += 0.5 * (wxx[2:, :] - 2.0 * wxx[1:-1, :] + wxx[:-2, :]) / dx ** 2
        upd[-1, :] += 0.5 * (wxx[-2, :] - 2.0 * wxx[-1, :]) / dx ** 2
        out_diff_x = float((wxx[0, :] + wxx[-1, :]).sum() * dy / (2.0 * dx))

        wyy = a22 * p
        upd[:, 0] += 0.5 * (wyy[:, 1] - 2.0 * wyy[:, 0]) / dy ** 2
        upd[:, 1:-1] += 0.5 * (wyy[:, 2:] - 2.0 * wyy[:, 1:-1] + wyy[:, :-2]) / dy ** 2
        upd[:, -1] += 0.5 * (wyy[:, -2] - 2.0 * wyy[:, -1]) / dy ** 2
        out_diff_y = float((wyy[:, 0] + wyy[:, -1]).sum() * dx / (2.0 * dy))

        # mixed term d1 d2 (A12 p), both off-diagonal halves combined
        wxy = a12 * p
        wp = np.zeros((n1 + 2, n2 + 2))
        wp[1:-1, 1:-1] = wxy
        upd += (wp[2:, 2:] - wp[2:, :-2] - wp[:-2, 2:] + wp[:-2, :-2]) / (4.0 * dx * dy)
        out_cross = -(wxy[0, 0] - wxy[0, -1] - wxy[-1, 0] + wxy[-1, -1]) / 4.0

        outflux = out_adv_x + out_adv_y + out_diff_x + out_diff_y + out_cross

        p += dt * upd
        flux_cum += dt * outflux
        t = target if hit else t + dt
        steps += 1

        if not np.all(np.isfinite(p)):
            raise NumericError(f"density became non-finite at t={t:.6g} (step {steps})")
        mass = float(p.sum() * cell)
        pmin = float(p.min())
        if pmin < _POSITIVITY_FLOOR:
            raise PositivityError(
                f"density undershot to {pmin:.3e} at t={t:.6g} (step {steps})")
        if abs(mass + flux_cum - 1.0) > _CONSERVATION_TOL:
            raise ConservationError(
                f"mass {mass:.8f} plus boundary flux {flux_cum:.8f} drifted from 1 "
                f"at t={t:.6g} (step {steps})")
        rec_t.push(t)
        rec_mass.push(mass)
        rec_min.push(pmin)
        rec_flux.push(flux_cum)
        if model.q:
            rec_stats.append((phi_rows @ p.ravel()).copy())
        if steps > _MAX_STEPS:
            raise StabilityError(f"exceeded {_MAX_STEPS} steps before the horizon")

        if hit:
            if target in snap_set:
                snapshots.append(GridDensity((ax1, ax2), p.copy(), time=target,
                                             mass_tol=_SNAPSHOT_MASS_TOL))
                snap_times.append(target)
            ev_i += 1

    stat_curve = np.array(rec_stats) if rec_stats else np.zeros((steps + 1, 0))
    return FPSolution(snapshots=snapshots, snapshot_times=tuple(snap_times),
                      times=rec_t.data(), mass_curve=rec_mass.data(),
                      min_value_curve=rec_min.data(),
                      boundary_flux_curve=rec_flux.data(),
                      stat_curve=stat_curve, n_steps=steps)


def fp_statistics_curve(solution: FPSolution, functionals) -> np.ndarray:
    """Statistic vectors of each snapshot, shape (n_snapshots, q)."""
    return np.array([grid_statistics(p, functionals) for p in solution.snapshots]
                    ).reshape(len(solution.snapshots), len(functionals))
