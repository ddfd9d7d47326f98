"""First-variation processes and Malliavin covariance along single paths.

For a simulated trajectory X the pair (Y, Z) solves, by the same Euler scheme
and the same increments,

    dY = Db Y dt + sum_j Dsig_j Y dW_j,                    Y(0) = I
    dZ = (-Z Db + sum_j Z Dsig_j Dsig_j) dt - sum_j Z Dsig_j dW_j,   Z(0) = I

so Z tracks Y^-1 and ||Z Y - I|| is a scheme-consistency diagnostic.  The
Malliavin covariance at time t is assembled as

    Q(t) = Y(t) [ integral_0^t Y(r)^-1 A(r) Y(r)^-T dr ] Y(t)^T,

with A = sigma sigma^T, and its smallest eigenvalue is compared against the
spectral floor t * lambda / gamma^4, where gamma is the realized sup of the
operator norms of Y and Y^-1 up to t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import operator_norm, singular_extremes, sym_eig_min
from .coefficients import CoefficientModel, diffusion_matrix
from .errors import ConditioningError, NumericError
from .measures import StatisticFlow
from .particle import ParticlePath, TimeGrid

_COND_FLOOR = 1e-12


@dataclass
class FirstVariationPath:
    """Y and Z along one trajectory: both (steps + 1, d, d)."""

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    path_index: int


@dataclass
class MalliavinCovariance:
    """Covariance snapshot at one time with its spectral diagnostics."""

    t: float
    Q: np.ndarray
    lambda_min: float
    gamma: float
    lam: float
    dt: float


@dataclass
class EllipticityBoundReport:
    holds: bool
    margin: float
    bound: float
    slack: float
    lambda_degenerate: bool


def _flow_check(model: CoefficientModel, path: ParticlePath, flow: StatisticFlow):
    if flow.stats.shape != (path.grid.steps + 1, model.q):
        raise ValueError(
            f"flow shape {flow.stats.shape} does not match grid/model "
            f"{(path.grid.steps + 1, model.q)}")


def simulate_first_variation(model: CoefficientModel, path: ParticlePath,
                             flow: StatisticFlow) -> FirstVariationPath:
    """Euler sweep of the (Y, Z) pair along a stored trajectory."""
    if model.db_dx is None or model.dsigma_dx is None:
        raise ValueError("model does not provide state Jacobians")
    _flow_check(model, path, flow)
    d = model.d
    M = path.grid.steps
    dt = path.grid.dt
    times = path.grid.times()
    eye = np.eye(d)
    Y = np.empty((M + 1, d, d))
    Z = np.empty((M + 1, d, d))
    Y[0] = eye
    Z[0] = eye
    for k in range(M):
        x = path.states[k]
        s = flow.stats[k]
        t = float(times[k])
        B = np.asarray(model.db_dx(t, x, s), dtype=float).reshape(d, d)
        S = np.asarray(model.dsigma_dx(t, x, s), dtype=float).reshape(model.m, d, d)
        dw = path.increments[k]
        noise = np.einsum("j,jab->ab", dw, S)
        Y[k + 1] = Y[k] + (B @ Y[k]) * dt + noise @ Y[k]
        z_drift = -(Z[k] @ B) + np.einsum("ab,jbc,jcd->ad", Z[k], S, S)
        Z[k + 1] = Z[k] + z_drift * dt - Z[k] @ noise
        if not (np.all(np.isfinite(Y[k + 1])) and np.all(np.isfinite(Z[k + 1]))):
            raise NumericError(f"first-variation pair became non-finite at step {k + 1}")
    return FirstVariationPath(grid=path.grid, Y=Y, Z=Z, path_index=path.index)


def zy_residual(fv: FirstVariationPath) -> np.ndarray:
    """Frobenius norm of Z_k Y_k - I at every grid time."""
    d = fv.Y.shape[1]
    prod = np.einsum("kab,kbc->kac", fv.Z, fv.Y) - np.eye(d)
    return np.sqrt(np.sum(prod ** 2, axis=(1, 2)))


def _solve_against(Y_r: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    smin, smax = singular_extremes(Y_r)
    if smin <= smax * _COND_FLOOR:
        cond = np.inf if smin == 0.0 else smax / smin
        raise ConditioningError(
            f"first-variation matrix is singular to tolerance "
            f"(condition estimate {cond:.3e})", cond_estimate=cond)
    return np.linalg.solve(Y_r, rhs)


def malliavin_derivative(fv: FirstVariationPath, path: ParticlePath,
                         model: CoefficientModel, flow: StatisticFlow,
                         r_index: int, j: int, t_index: int) -> np.ndarray:
    """D_r^j X(t) = Y(t) Y(r)^-1 sigma_j(r) on the grid; zero for r > t.

    ``Y(r)`` is applied through a linear solve, never an explicit inverse.
    """
    _flow_check(model, path, flow)
    M = path.grid.steps
    if not (0 <= r_index <= M and 0 <= t_index <= M):
        raise ValueError(f"time indices must lie in [0, {M}]")
    if not 0 <= j < model.m:
        raise ValueError(f"noise index {j} outside [0, {model.m})")
    if r_index > t_index:
        return np.zeros(model.d)
    t_r = float(path.grid.times()[r_index])
    sig = np.asarray(model.sigma(t_r, path.states[r_index], flow.stats[r_index]),
                     dtype=float).reshape(model.d, model.m)
    v = _solve_against(fv.Y[r_index], sig[:, j])
    return fv.Y[t_index] @ v


def covariance_curve(fv: FirstVariationPath, path: ParticlePath,
                     model: CoefficientModel, flow: StatisticFlow,
                     lam: float = 0.0) -> list[MalliavinCovariance]:
    """Malliavin covariance at every grid time by cumulative trapezoid.

    One pass computes the whole curve: the reduced integrand
    G(r) = Y(r)^-1 A(r) Y(r)^-T is accumulated once and conjugated by Y(t)
    at each output time.  ``gamma`` at time t is the realized sup over r <= t
    of max(||Y(r)||, ||Y(r)^-1||) in operator norm.
    """
    _flow_check(model, path, flow)
    d = model.d
    M = path.grid.steps
    dt = path.grid.dt
    times = path.grid.times()
    out: list[MalliavinCovariance] = []
    P = np.zeros((d, d))
    G_prev = None
    gamma = 0.0
    for k in range(M + 1):
        t = float(times[k])
        A = diffusion_matrix(model, t, path.states[k], flow.stats[k])
        smin, smax = singular_extremes(fv.Y[k])
        if smin <= smax * _COND_FLOOR:
            cond = np.inf if smin == 0.0 else smax / smin
            raise ConditioningError(
                f"first-variation matrix at index {k} is singular to tolerance "
                f"(condition estimate {cond:.3e})", cond_estimate=cond)
        gamma = max(gamma, smax, 1.0 / smin)
        G = np.linalg.solve(fv.Y[k], np.linalg.solve(fv.Y[k], A).T)
        G = 0.5 * (G + G.T)
        if G_prev is not None:
            P = P + 0.5 * dt * (G_prev + G)
        G_prev = G
        Q = fv.Y[k] @ P @ fv.Y[k].T
        Q = 0.5 * (Q + Q.T)
        out.append(MalliavinCovariance(
            t=t, Q=Q, lambda_min=sym_eig_min(Q), gamma=gamma,
            lam=float(lam), dt=dt))
    return out


def malliavin_covariance(fv: FirstVariationPath, path: ParticlePath,
                         model: CoefficientModel, flow: StatisticFlow,
                         t_index: int, lam: float = 0.0) -> MalliavinCovariance:
    """Covariance at one grid time (see ``covariance_curve``)."""
    M = path.grid.steps
    if not 1 <= t_index <= M:
        raise ValueError(f"time index must lie in [1, {M}]")
    return covariance_curve(fv, path, model, flow, lam=lam)[t_index]


def ellipticity_bound_check(cov: MalliavinCovariance,
                            slack_factor: float = 10.0) -> EllipticityBoundReport:
    """Check lambda_min(Q(t)) >= t lambda / gamma^4 - slack.

    The slack absorbs quadrature error: ``slack_factor * dt * ||Q||``.  A
    nonpositive lambda makes the floor trivial and is flagged.
    """
    bound = cov.t * cov.lam / cov.gamma ** 4 if cov.gamma > 0 else 0.0
    slack = slack_factor * cov.dt * operator_norm(cov.Q)
    return EllipticityBoundReport(
        holds=bool(cov.lambda_min >= bound - slack),
        margin=float(cov.lambda_min - bound),
        bound=float(bound),
        slack=float(slack),
        lambda_degenerate=bool(cov.lam <= 0.0))


def path_diagnostics(model: CoefficientModel, path: ParticlePath,
                     flow: StatisticFlow, lam: float = 0.0) -> dict:
    """Per-time diagnostic arrays for one path.

    Returns ``times``, ``lambda_min`` of Q, the spectral floor
    ``t lambda / gamma^4``, and the ZY residual, each of length steps + 1.
    """
    fv = simulate_first_variation(model, path, flow)
    curve = covariance_curve(fv, path, model, flow, lam=lam)
    times = path.grid.times()
    lam_min = np.array([c.lambda_min for c in curve])
    floor = np.array([c.t * c.lam / c.gamma ** 4 if c.gamma > 0 else 0.0 for c in curve])
    return {"times": times, "lambda_min": lam_min, "bound": floor,
            "zy_residual": zy_residual(fv), "fv": fv, "curve": curve}
