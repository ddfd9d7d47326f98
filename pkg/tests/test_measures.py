"""Measure containers, density estimation, and the transport metrics.

Expected values marked with a derivation comment were computed from the
closed form stated there; the rest are direct consequences of definitions.
"""

import math

import numpy as np
import pytest
from scipy.stats import norm

from mvsim import (
    EmpiricalMeasure,
    GridAxis,
    GridDensity,
    StatisticFunctional,
    empirical_statistics,
    grid_statistics,
    kde_1d,
    l1_grid_distance,
    silverman_bandwidth,
    w2_empirical_1d,
    w2_sliced,
    w2_to_dirac0,
)
from mvsim.measures import (
    empirical_to_csv,
    grid_density_from_csv,
    grid_density_to_csv,
    grid_marginal,
    sliced_directions,
    w2_cloud_vs_density_1d,
)

SIN_KERNEL = StatisticFunctional(
    "sin-kernel", lambda pts: np.sin(pts[..., 0]) / (1.0 + pts[..., 0] ** 2))


def _cloud(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return EmpiricalMeasure(pts, np.full(len(pts), 1.0 / len(pts)))


def _gaussian_grid(axis, mean=0.0, sd=1.0):
    vals = norm.pdf(axis.nodes(), loc=mean, scale=sd)
    return GridDensity((axis,), vals, mass_tol=1e-4)


def _two_atom_w2(a0, a1, b0, b1):
    # brute-force both couplings of two equal-weight atoms
    c1 = ((a0 - b0) ** 2 + (a1 - b1) ** 2) / 2.0
    c2 = ((a0 - b1) ** 2 + (a1 - b0) ** 2) / 2.0
    return math.sqrt(min(c1, c2))


class TestEmpiricalStatistics:
    def test_zero_at_origin(self):
        mu = _cloud([0.0, 0.0, 0.0])
        assert empirical_statistics(mu, (SIN_KERNEL,))[0] == 0.0

    def test_symmetric_pair_second_moment(self):
        mu = _cloud([1.0, -1.0])
        phi = StatisticFunctional("sq", lambda p: p[..., 0] ** 2)
        assert empirical_statistics(mu, (phi,))[0] == pytest.approx(1.0)

    def test_sin_kernel_two_points(self):
        # 0.5*(sin 0/(1+0) + sin(pi/2)/(1+pi^2/4)) = 0.5/(1+pi^2/4) ~ 0.14420
        mu = _cloud([0.0, math.pi / 2.0])
        expected = 0.5 / (1.0 + math.pi ** 2 / 4.0)
        got = empirical_statistics(mu, (SIN_KERNEL,))[0]
        assert got == pytest.approx(expected, abs=1e-15)

    def test_nonfinite_value_names_particle(self):
        from mvsim import NumericError
        phi = StatisticFunctional("inv", lambda p: 1.0 / p[..., 0])
        with np.errstate(divide="ignore"):
            with pytest.raises(NumericError, match="particle 1"):
                empirical_statistics(_cloud([1.0, 0.0, 2.0]), (phi,))

    def test_empty_functionals(self):
        assert empirical_statistics(_cloud([1.0]), ()).shape == (0,)


class TestGridStatistics:
    def test_odd_functional_on_symmetric_density(self):
        p = _gaussian_grid(GridAxis(-8.0, 8.0, 801))
        assert abs(grid_statistics(p, (SIN_KERNEL,))[0]) < 1e-9

    def test_uniform_mean(self):
        ax = GridAxis(0.0, 1.0, 101)
        p = GridDensity((ax,), np.ones(101), mass_tol=1e-12)
        phi = StatisticFunctional("id", lambda q: q[..., 0])
        assert grid_statistics(p, (phi,))[0] == pytest.approx(0.5, abs=1e-6)

    def test_gaussian_second_moment(self):
        p = _gaussian_grid(GridAxis(-8.0, 8.0, 1601))
        phi = StatisticFunctional("sq", lambda q: q[..., 0] ** 2)
        assert grid_statistics(p, (phi,))[0] == pytest.approx(1.0, abs=1e-4)


class TestKde:
    def test_single_particle_is_kernel(self):
        ax = GridAxis(-6.0, 6.0, 1201)
        h = 0.5
        kde = kde_1d(_cloud([0.0]), ax, h)
        expect = norm.pdf(ax.nodes(), scale=h)
        expect /= np.trapezoid(expect, ax.nodes())
        np.testing.assert_allclose(kde.values, expect, atol=1e-12)

    def test_large_sample_recovers_standard_normal(self):
        rng = np.random.default_rng(42)
        mu = _cloud(rng.standard_normal(100_000))
        ax = GridAxis(-8.0, 8.0, 1601)
        kde = kde_1d(mu, ax, "auto")
        exact = _gaussian_grid(ax)
        assert l1_grid_distance(kde, exact) < 0.02

    def test_two_particles_bimodal(self):
        ax = GridAxis(-3.0, 3.0, 601)
        kde = kde_1d(_cloud([-1.0, 1.0]), ax, 0.1)
        nodes = ax.nodes()
        left = kde.values[nodes < 0.0]
        right = kde.values[nodes >= 0.0]
        assert abs(nodes[nodes < 0.0][np.argmax(left)] + 1.0) <= ax.spacing
        assert abs(nodes[nodes >= 0.0][np.argmax(right)] - 1.0) <= ax.spacing

    def test_unit_mass_after_renormalization(self):
        rng = np.random.default_rng(3)
        ax = GridAxis(-10.0, 10.0, 501)
        for _ in range(10):
            mu = _cloud(rng.normal(size=rng.integers(2, 40)))
            kde = kde_1d(mu, ax, float(rng.uniform(0.05, 1.0)))
            assert abs(kde.mass() - 1.0) < 1e-10

    def test_silverman_rule(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=500)
        mu = _cloud(pts)
        expected = 1.06 * pts.std(ddof=1) * 500 ** (-0.2)
        assert silverman_bandwidth(mu) == pytest.approx(expected, rel=1e-12)

    def test_bad_bandwidth(self):
        with pytest.raises(ValueError, match="bandwidth must be positive"):
            kde_1d(_cloud([0.0]), GridAxis(-1.0, 1.0, 11), -0.1)

    def test_statistics_gap_shrinks_under_refinement(self):
        # gap between grid and empirical statistics is O(h^2) for smooth phi,
        # so refining the grid and halving the bandwidth cuts it by >= 2
        rng = np.random.default_rng(17)
        mu = _cloud(rng.standard_normal(500))
        phi = StatisticFunctional("sq", lambda p: p[..., 0] ** 2)
        target = empirical_statistics(mu, (phi,))[0]
        gaps = []
        for nodes, h in ((801, 0.2), (1601, 0.1)):
            kde = kde_1d(mu, GridAxis(-8.0, 8.0, nodes), h)
            gaps.append(abs(grid_statistics(kde, (phi,))[0] - target))
        assert gaps[1] <= 0.6 * gaps[0]


class TestW2:
    def test_identical_clouds(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=30)
        assert w2_empirical_1d(_cloud(pts), _cloud(pts)) == 0.0

    def test_singleton_translation(self):
        assert w2_empirical_1d(_cloud([0.0]), _cloud([2.5])) == pytest.approx(2.5)

    def test_two_atoms_versus_enumeration(self):
        # {0,1} vs {0,3}: costs (0+4)/2 = 2 and (9+1)/2 = 5, so W2 = sqrt(2)
        got = w2_empirical_1d(_cloud([0.0, 1.0]), _cloud([0.0, 3.0]))
        assert got == pytest.approx(math.sqrt(2.0), abs=1e-12)
        assert got == pytest.approx(_two_atom_w2(0.0, 1.0, 0.0, 3.0), abs=1e-12)

    def test_random_pairs_match_enumeration(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            a = rng.normal(size=2)
            b = rng.normal(size=2)
            got = w2_empirical_1d(_cloud(a), _cloud(b))
            assert got == pytest.approx(_two_atom_w2(*a, *b), abs=1e-10)

    def test_symmetry_and_triangle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            a, b, c = (_cloud(rng.normal(size=n) * rng.uniform(0.5, 2.0))
                       for _ in range(3))
            assert w2_empirical_1d(a, b) == w2_empirical_1d(b, a)
            assert (w2_empirical_1d(a, c)
                    <= w2_empirical_1d(a, b) + w2_empirical_1d(b, c) + 1e-10)

    def test_coupling_upper_bound(self):
        # transporting along the pairing can never beat the optimal coupling
        rng = np.random.default_rng(8)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            x = rng.normal(size=n) * rng.uniform(0.2, 3.0)
            y = x + rng.normal(size=n) * rng.uniform(0.0, 2.0)
            rms = math.sqrt(float(np.mean((x - y) ** 2)))
            assert w2_empirical_1d(_cloud(x), _cloud(y)) <= rms + 1e-10

    def test_weighted_quantile_coupling(self):
        # unequal weights: {0 w=3/4, 1 w=1/4} vs {0 w=1/4, 1 w=3/4}
        # quantile functions differ on u in (1/4, 3/4), squared gap 1 there
        a = EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([0.75, 0.25]))
        b = EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([0.25, 0.75]))
        assert w2_empirical_1d(a, b) == pytest.approx(math.sqrt(0.5), abs=1e-12)

    def test_dimension_mismatch(self):
        a = _cloud([0.0])
        b = EmpiricalMeasure(np.zeros((1, 2)), np.ones(1))
        with pytest.raises(ValueError, match="1D"):
            w2_empirical_1d(a, b)


class TestSlicedW2:
    def test_identical(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(20, 3))
        mu = EmpiricalMeasure(pts, np.full(20, 0.05))
        assert w2_sliced(mu, mu, 64, seed=0) == 0.0

    def test_translation_norm_over_sqrt_d(self):
        # E[(theta . v)^2] = |v|^2/d for uniform unit directions
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(64, 3))
        v = np.array([1.0, -2.0, 2.0])
        a = EmpiricalMeasure(pts, np.full(64, 1 / 64))
        b = EmpiricalMeasure(pts + v, np.full(64, 1 / 64))
        got = w2_sliced(a, b, 256, seed=0)
        assert got == pytest.approx(np.linalg.norm(v) / math.sqrt(3), rel=0.05)

    def test_singletons_match_direct_average(self):
        p = np.array([0.3, -1.2])
        q = np.array([1.1, 0.4])
        a = EmpiricalMeasure(p[None, :], np.ones(1))
        b = EmpiricalMeasure(q[None, :], np.ones(1))
        theta = sliced_directions(2, 128, seed=5)
        direct = math.sqrt(float(np.mean((theta @ (p - q)) ** 2)))
        assert w2_sliced(a, b, 128, seed=5) == pytest.approx(direct, abs=1e-12)

    def test_seed_determinism(self):
        rng = np.random.default_rng(6)
        a = EmpiricalMeasure(rng.normal(size=(10, 2)), np.full(10, 0.1))
        b = EmpiricalMeasure(rng.normal(size=(10, 2)), np.full(10, 0.1))
        assert w2_sliced(a, b, 32, seed=9) == w2_sliced(a, b, 32, seed=9)

    def test_bad_slice_count(self):
        rng = np.random.default_rng(6)
        a = EmpiricalMeasure(rng.normal(size=(4, 2)), np.full(4, 0.25))
        with pytest.raises(ValueError):
            w2_sliced(a, a, 0, seed=0)


class TestDiracDistance:
    def test_at_origin(self):
        assert w2_to_dirac0(_cloud([0.0, 0.0])) == 0.0

    def test_pythagorean_point(self):
        mu = EmpiricalMeasure(np.array([[3.0, 4.0]]), np.ones(1))
        assert w2_to_dirac0(mu) == pytest.approx(5.0)

    def test_symmetric_pair(self):
        assert w2_to_dirac0(_cloud([1.0, -1.0])) == pytest.approx(1.0)


class TestL1Distance:
    def test_identical(self):
        p = _gaussian_grid(GridAxis(-8.0, 8.0, 401))
        assert l1_grid_distance(p, p) == 0.0

    def test_disjoint_boxes(self):
        ax = GridAxis(0.0, 2.0, 2001)
        nodes = ax.nodes()
        left = np.where(nodes <= 1.0, 1.0, 0.0)
        right = np.where(nodes >= 1.0, 1.0, 0.0)
        left /= np.trapezoid(left, nodes)
        right /= np.trapezoid(right, nodes)
        p = GridDensity((ax,), left, mass_tol=1e-9)
        r = GridDensity((ax,), right, mass_tol=1e-9)
        assert l1_grid_distance(p, r) == pytest.approx(2.0, abs=0.01)

    def test_shifted_gaussians(self):
        # exact L1 between N(0,1) and N(0.1,1): densities cross at the
        # midpoint 0.05, giving 2*(Phi(0.05) - Phi(-0.05))
        ax = GridAxis(-8.0, 8.0, 3201)
        p = _gaussian_grid(ax, mean=0.0)
        r = _gaussian_grid(ax, mean=0.1)
        expected = 2.0 * (norm.cdf(0.05) - norm.cdf(-0.05))
        assert l1_grid_distance(p, r) == pytest.approx(expected, abs=1e-4)

    def test_grid_mismatch(self):
        p = _gaussian_grid(GridAxis(-8.0, 8.0, 401))
        r = _gaussian_grid(GridAxis(-8.0, 8.0, 801))
        with pytest.raises(ValueError, match="grids differ"):
            l1_grid_distance(p, r)


class TestContainers:
    def test_weights_must_normalize(self):
        with pytest.raises(ValueError, match="sum to"):
            EmpiricalMeasure(np.zeros((2, 1)), np.array([0.5, 0.4]))

    def test_weights_nonnegative(self):
        with pytest.raises(ValueError, match="nonnegative"):
            EmpiricalMeasure(np.zeros((2, 1)), np.array([1.5, -0.5]))

    def test_points_finite(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(np.array([[np.nan]]), np.ones(1))

    def test_from_samples_uniform_weights(self):
        mu = EmpiricalMeasure.from_samples(np.arange(4.0)[:, None])
        np.testing.assert_allclose(mu.weights, 0.25)

    def test_grid_density_mass_window(self):
        ax = GridAxis(-1.0, 1.0, 21)
        with pytest.raises(ValueError, match="trapezoid mass"):
            GridDensity((ax,), np.ones(21), mass_tol=1e-6)

    def test_grid_axis_validation(self):
        with pytest.raises(ValueError, match="inverted"):
            GridAxis(1.0, -1.0, 11)
        with pytest.raises(ValueError, match="at least 2"):
            GridAxis(0.0, 1.0, 1)

    def test_spacing_uniform(self):
        ax = GridAxis(-2.0, 2.0, 5)
        assert ax.spacing == 1.0
        np.testing.assert_allclose(np.diff(ax.nodes()), 1.0)


class TestSerialization:
    def test_density_csv_roundtrip_1d(self, tmp_path):
        p = _gaussian_grid(GridAxis(-5.0, 5.0, 201))
        path = tmp_path / "p.csv"
        grid_density_to_csv(p, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x,p"
        assert len(lines) == 202
        back = grid_density_from_csv(path)
        np.testing.assert_allclose(back.values, p.values)

    def test_density_csv_2d_header_and_rowmajor(self, tmp_path):
        ax = GridAxis(-4.0, 4.0, 41)
        g = norm.pdf(ax.nodes())
        vals = np.outer(g, g)
        p = GridDensity((ax, ax), vals, mass_tol=1e-2)
        path = tmp_path / "p2.csv"
        grid_density_to_csv(p, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x,y,p"
        assert len(lines) == 1 + 41 * 41
        first = lines[1].split(",")
        second = lines[2].split(",")
        assert float(first[0]) == float(second[0])  # x varies slowest

    def test_empirical_csv(self, tmp_path):
        mu = EmpiricalMeasure(np.array([[1.0, 2.0], [3.0, 4.0]]),
                              np.array([0.5, 0.5]))
        path = tmp_path / "mu.csv"
        empirical_to_csv(mu, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "w,x1,x2"
        assert len(lines) == 3


class TestMarginalsAndQuantiles:
    def test_product_gaussian_marginal(self):
        ax = GridAxis(-6.0, 6.0, 301)
        g = norm.pdf(ax.nodes())
        p = GridDensity((ax, ax), np.outer(g, g), mass_tol=1e-3)
        m = grid_marginal(p, 0)
        expect = _gaussian_grid(ax)
        assert l1_grid_distance(m, expect) < 1e-3

    def test_cloud_versus_density_quantile_metric(self):
        # singleton at c against N(0,1): W2^2 = c^2 + 1
        p = _gaussian_grid(GridAxis(-10.0, 10.0, 4001))
        mu = _cloud([2.0])
        got = w2_cloud_vs_density_1d(mu, p, n_quantiles=8192)
        assert got == pytest.approx(math.sqrt(5.0), rel=1e-3)
