"""Probability-measure containers and distances.

Two representations are used throughout: weighted particle clouds
(``EmpiricalMeasure``) and densities sampled on uniform grids
(``GridDensity``, dimensions 1 and 2).  Distances follow the quadratic
Wasserstein metric: exact quantile coupling in one dimension, a sliced
reduction above it, and L1 for same-grid densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError

SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass
class EmpiricalMeasure:
    """Weighted particle cloud: ``points`` (N, d), ``weights`` (N,) summing to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.points.shape[0] != self.weights.shape[0]:
            raise ValueError(
                f"{self.points.shape[0]} points but {self.weights.shape[0]} weights")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("cloud contains non-finite points")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total}, expected 1 within 1e-12")

    @classmethod
    def from_samples(cls, points: np.ndarray) -> "EmpiricalMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class GridAxis:
    """Uniform 1D axis with ``n`` nodes spanning [lo, hi]."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("axis needs at least 2 nodes")
        if not self.hi > self.lo:
            raise ValueError(f"axis bounds inverted: [{self.lo}, {self.hi}]")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)


def trapezoid_weights(axis: GridAxis) -> np.ndarray:
    w = np.full(axis.n, axis.spacing)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass
class GridDensity:
    """Density values on the nodes of a 1D or 2D uniform grid.

    Values may dip slightly negative (explicit schemes undershoot); the
    trapezoid mass must stay within ``mass_tol`` of 1.
    """

    axes: tuple[GridAxis, ...]
    values: np.ndarray
    time: float = 0.0
    mass_tol: float = 1e-6

    def __post_init__(self):
        self.axes = tuple(self.axes)
        if len(self.axes) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        self.values = np.asarray(self.values, dtype=float)
        want = tuple(ax.n for ax in self.axes)
        if self.values.shape != want:
            raise ValueError(f"values shape {self.values.shape}, grid wants {want}")
        m = self.mass()
        if abs(m - 1.0) > self.mass_tol:
            raise ValueError(
                f"trapezoid mass {m} outside 1 +- {self.mass_tol}")

    @property
    def dim(self) -> int:
        return len(self.axes)

    def node_weights(self) -> np.ndarray:
        if self.dim == 1:
            return trapezoid_weights(self.axes[0])
        return np.outer(trapezoid_weights(self.axes[0]), trapezoid_weights(self.axes[1]))

    def mass(self) -> float:
        return float(np.sum(self.node_weights() * self.values))

    def node_coords(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes_total, dim), row-major."""
        if self.dim == 1:
            return self.axes[0].nodes()[:, None]
        xx, yy = np.meshgrid(self.axes[0].nodes(), self.axes[1].nodes(), indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass
class StatisticFlow:
    """Statistic vector s as a function of time on a fixed grid: (len(times), q)."""

    times: np.ndarray
    stats: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.stats = np.asarray(self.stats, dtype=float)
        if self.stats.ndim != 2 or self.stats.shape[0] != self.times.shape[0]:
            raise ValueError(
                f"stats shape {self.stats.shape} incompatible with {self.times.shape[0]} times")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.stats)):
            raise ValueError("statistic flow contains non-finite entries")

    @property
    def q(self) -> int:
        return self.stats.shape[1]


def empirical_statistics(mu: EmpiricalMeasure, functionals) -> np.ndarray:
    """s_k = sum_i w_i phi_k(x_i), shape (q,)."""
    out = np.empty(len(functionals))
    for k, f in enumerate(functionals):
        vals = np.asarray(f.phi(mu.points), dtype=float)
        bad = ~np.isfinite(vals)
        if bad.any():
            i = int(np.argmax(bad))
            raise NumericError(
                f"functional {f.id!r} is non-finite at particle {i}")
        out[k] = float(np.dot(mu.weights, vals))
    return out


def grid_statistics(p: GridDensity, functionals) -> np.ndarray:
    """s_k = trapezoid integral of phi_k(x) p(x), shape (q,)."""
    w = (p.node_weights() * p.values).ravel()
    coords = p.node_coords()
    out = np.empty(len(functionals))
    for k, f in enumerate(functionals):
        out[k] = float(np.dot(w, np.asarray(f.phi(coords), dtype=float)))
    return out


def silverman_bandwidth(mu: EmpiricalMeasure) -> float:
    """1.06 sigma_hat n^(-1/5); sigma_hat from the weighted cloud."""
    if mu.d != 1:
        raise ValueError("bandwidth rule applies to 1D clouds")
    x = mu.points[:, 0]
    mean = float(np.dot(mu.weights, x))
    var = float(np.dot(mu.weights, (x - mean) ** 2))
    if mu.n > 1 and np.allclose(mu.weights, 1.0 / mu.n):
        var *= mu.n / (mu.n - 1)
    sd = math.sqrt(var)
    if sd <= 0:
        raise ValueError("degenerate cloud: automatic bandwidth undefined")
    return 1.06 * sd * mu.n ** (-0.2)


def kde_1d(mu: EmpiricalMeasure, axis: GridAxis,
           bandwidth: float | str = "auto", time: float = 0.0) -> GridDensity:
    """Gaussian kernel density of a 1D cloud on grid nodes.

    The result is renormalized to unit trapezoid mass, so tail mass beyond
    the grid is folded back in.
    """
    if mu.d != 1:
        raise ValueError("kde_1d expects a 1D cloud")
    h = silverman_bandwidth(mu) if bandwidth == "auto" else float(bandwidth)
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    nodes = axis.nodes()
    vals = np.zeros(axis.n)
    x = mu.points[:, 0]
    w = mu.weights
    chunk = max(1, int(4_000_000 / axis.n))
    for i in range(0, mu.n, chunk):
        z = (nodes[None, :] - x[i:i + chunk, None]) / h
        vals += w[i:i + chunk] @ np.exp(-0.5 * z * z)
    vals /= h * SQRT2PI
    total = float(np.dot(trapezoid_weights(axis), vals))
    if total <= 0:
        raise ValueError("all kernel mass fell outside the grid")
    vals /= total
    return GridDensity((axis,), vals, time=time, mass_tol=1e-10)


def _sorted_quantile_pieces(mu: EmpiricalMeasure) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(mu.points[:, 0], kind="stable")
    return mu.points[order, 0], np.cumsum(mu.weights[order])


def w2_empirical_1d(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact quadratic Wasserstein distance between 1D clouds.

    Uses the quantile coupling: both quantile functions are piecewise
    constant on the merged partition of cumulative weights, so the integral
    of their squared difference is a finite sum.
    """
    if a.d != 1 or b.d != 1:
        raise ValueError("exact coupling requires 1D clouds")
    xa, ca = _sorted_quantile_pieces(a)
    xb, cb = _sorted_quantile_pieces(b)
    cuts = np.union1d(ca, cb)
    cuts = cuts[cuts > 0.0]
    lo = np.concatenate(([0.0], cuts[:-1]))
    lens = cuts - lo
    mids = lo + 0.5 * lens
    ia = np.minimum(np.searchsorted(ca, mids, side="left"), len(xa) - 1)
    ib = np.minimum(np.searchsorted(cb, mids, side="left"), len(xb) - 1)
    cost = float(np.dot(lens, (xa[ia] - xb[ib]) ** 2))
    return math.sqrt(max(cost, 0.0))


def sliced_directions(d: int, n_slices: int, seed: int) -> np.ndarray:
    """Seeded unit directions on the sphere, shape (n_slices, d)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n_slices, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # resample the (measure-zero) degenerate rows deterministically
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


def _project(mu: EmpiricalMeasure, direction: np.ndarray) -> EmpiricalMeasure:
    return EmpiricalMeasure((mu.points @ direction)[:, None], mu.weights)


def w2_sliced(a: EmpiricalMeasure, b: EmpiricalMeasure,
              n_slices: int = 64, seed: int = 0) -> float:
    """Sliced quadratic Wasserstein: RMS over random directions of 1D distances."""
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    if n_slices < 1:
        raise ValueError(f"need at least one slice, got {n_slices}")
    if a.d == 1:
        return w2_empirical_1d(a, b)
    dirs = sliced_directions(a.d, n_slices, seed)
    acc = 0.0
    for u in dirs:
        acc += w2_empirical_1d(_project(a, u), _project(b, u)) ** 2
    return math.sqrt(acc / n_slices)


def w2_to_dirac0(mu: EmpiricalMeasure) -> float:
    """W2 distance to the point mass at the origin: sqrt(sum w ||x||^2)."""
    return math.sqrt(float(np.dot(mu.weights, np.sum(mu.points ** 2, axis=1))))


def l1_grid_distance(p: GridDensity, r: GridDensity) -> float:
    """Trapezoid integral of |p - r| on a shared grid."""
    if p.axes != r.axes:
        raise ValueError("grids differ; L1 distance needs identical axes")
    return float(np.sum(p.node_weights() * np.abs(p.values - r.values)))


def grid_marginal(p: GridDensity, axis_index: int) -> GridDensity:
    """Integrate a 2D density down to the marginal along one axis."""
    if p.dim != 2:
        raise ValueError("marginal extraction applies to 2D grids")
    if axis_index not in (0, 1):
        raise ValueError("axis_index must be 0 or 1")
    other = 1 - axis_index
    w = trapezoid_weights(p.axes[other])
    vals = np.tensordot(p.values, w, axes=([other], [0]))
    return GridDensity((p.axes[axis_index],), vals, time=p.time, mass_tol=max(p.mass_tol, 1e-9))


def grid_cdf_quantiles(p: GridDensity, levels: np.ndarray) -> np.ndarray:
    """Inverse CDF of a 1D grid density at the given levels in (0, 1)."""
    if p.dim != 1:
        raise ValueError("quantiles require a 1D density")
    nodes = p.axes[0].nodes()
    dx = p.axes[0].spacing
    seg = 0.5 * dx * (p.values[:-1] + p.values[1:])
    cdf = np.concatenate(([0.0], np.cumsum(seg)))
    cdf /= cdf[-1]
    return np.interp(levels, cdf, nodes)


def w2_cloud_vs_density_1d(mu: EmpiricalMeasure, p: GridDensity,
                           n_quantiles: int = 4096) -> float:
    """Quadratic Wasserstein between a 1D cloud and a 1D grid density.

    Quantile functions are compared at ``n_quantiles`` midpoint levels; the
    density side is interpolated from its trapezoid CDF.
    """
    if mu.d != 1 or p.dim != 1:
        raise ValueError("both arguments must be one-dimensional")
    u = (np.arange(n_quantiles) + 0.5) / n_quantiles
    xa, ca = _sorted_quantile_pieces(mu)
    ia = np.minimum(np.searchsorted(ca, u, side="left"), len(xa) - 1)
    qa = xa[ia]
    qb = grid_cdf_quantiles(p, u)
    return math.sqrt(float(np.mean((qa - qb) ** 2)))


def empirical_radial_moment(mu: EmpiricalMeasure, order: float) -> float:
    """E ||X||^order under the cloud."""
    r = np.sqrt(np.sum(mu.points ** 2, axis=1))
    return float(np.dot(mu.weights, r ** order))


def grid_radial_moment(p: GridDensity, order: float) -> float:
    """Integral of ||x||^order p(x) by the trapezoid rule."""
    r = np.sqrt(np.sum(p.node_coords() ** 2, axis=1))
    return float(np.dot((p.node_weights() * p.values).ravel(), r ** order))


def _fmt(v: float) -> str:
    return repr(float(v))


def grid_density_to_csv(p: GridDensity, path) -> None:
    """Write ``x,p`` (1D) or ``x,y,p`` (2D, row-major) rows."""
    lines = []
    if p.dim == 1:
        lines.append("x,p")
        for x, v in zip(p.axes[0].nodes(), p.values):
            lines.append(f"{_fmt(x)},{_fmt(v)}")
    else:
        lines.append("x,y,p")
        xs = p.axes[0].nodes()
        ys = p.axes[1].nodes()
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(p.values[i, j])}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def empirical_to_csv(mu: EmpiricalMeasure, path) -> None:
    """Write ``w,x1[,x2,...]`` rows."""
    cols = ",".join(f"x{i + 1}" for i in range(mu.d))
    lines = [f"w,{cols}"]
    for w, row in zip(mu.weights, mu.points):
        lines.append(",".join([_fmt(w)] + [_fmt(v) for v in row]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def grid_density_from_csv(path, time: float = 0.0, mass_tol: float = 1e-6) -> GridDensity:
    """Rebuild a GridDensity from its CSV serialization."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.dtype.names == ("x", "p"):
        x = data["x"]
        ax = GridAxis(float(x[0]), float(x[-1]), len(x))
        return GridDensity((ax,), data["p"], time=time, mass_tol=mass_tol)
    x = np.unique(data["x"])
    y = np.unique(data["y"])
    ax1 = GridAxis(float(x[0]), float(x[-1]), len(x))
    ax2 = GridAxis(float(y[0]), float(y[-1]), len(y))
    vals = data["p"].reshape(len(x), len(y))
    return GridDensity((ax1, ax2), vals, time=time, mass_tol=mass_tol)
