"""Time grids, noise streams, and the interacting/frozen-flow simulators."""

import math

import numpy as np
import pytest

from mvsim import (
    CoefficientModel,
    InitialLaw,
    SimulationError,
    StatisticFlow,
    TimeGrid,
    empirical_statistics,
    generate_brownian,
    get_preset,
    initial_states,
    moment_curve,
    particle_stream,
    simulate_frozen_flow,
    simulate_interacting,
)
from mvsim.particle import coarsen_increments


def _const_model(d=1, drift=0.0, vol=1.0):
    def sigma(t, x, s):
        return np.broadcast_to(vol * np.eye(d), x.shape[:-1] + (d, d))

    return CoefficientModel(
        d=d, m=d, functionals=(),
        b=lambda t, x, s: np.full_like(x, drift),
        sigma=sigma,
        db_dx=lambda t, x, s: np.zeros(x.shape[:-1] + (d, d)),
        dsigma_dx=lambda t, x, s: np.zeros(x.shape[:-1] + (d, d, d)),
        b_static=True, sigma_static=True)


class TestTimeGrid:
    def test_basic_layout(self):
        g = TimeGrid(2.0, 4)
        assert g.dt == 0.5
        np.testing.assert_allclose(g.times(), [0.0, 0.5, 1.0, 1.5, 2.0])
        assert g.index_of(1.5) == 3

    def test_index_of_rejects_off_grid(self):
        with pytest.raises(ValueError, match="not a node"):
            TimeGrid(1.0, 3).index_of(0.5)

    def test_halved(self):
        g = TimeGrid(1.0, 10).halved()
        assert g.steps == 20 and g.horizon == 1.0

    def test_validation(self):
        with pytest.raises(ValueError, match="horizon"):
            TimeGrid(0.0, 5)
        with pytest.raises(ValueError, match="step"):
            TimeGrid(1.0, 0)


class TestBrownianStreams:
    def test_bitwise_repeatable(self):
        g = TimeGrid(1.0, 20)
        a = generate_brownian(11, 50, 2, g)
        b = generate_brownian(11, 50, 2, g)
        assert a.shape == (20, 50, 2)
        assert np.array_equal(a, b)

    def test_adjacent_seeds_differ(self):
        g = TimeGrid(1.0, 20)
        a = generate_brownian(11, 50, 1, g)
        b = generate_brownian(12, 50, 1, g)
        assert np.any(a != b)

    def test_per_particle_streams_stable_under_count(self):
        # growing the cloud must not reshuffle earlier particles' noise
        g = TimeGrid(1.0, 16)
        small = generate_brownian(3, 3, 1, g)
        big = generate_brownian(3, 5, 1, g)
        assert np.array_equal(small, big[:, :3, :])

    def test_stream_objects_are_independent(self):
        a = particle_stream(5, 0).standard_normal(8)
        b = particle_stream(5, 1).standard_normal(8)
        assert np.any(a != b)
        again = particle_stream(5, 0).standard_normal(8)
        np.testing.assert_array_equal(a, again)

    def test_increment_moments(self):
        g = TimeGrid(1.0, 100)
        inc = generate_brownian(1, 10_000, 1, g)
        dt = g.dt
        var = inc.var(axis=(1, 2))
        assert np.all(var > 0.8 * dt) and np.all(var < 1.2 * dt)
        assert abs(inc.mean()) < 5.0 / math.sqrt(10_000 * 100) * math.sqrt(dt)

    def test_coarsen_pairs_steps(self):
        g = TimeGrid(1.0, 8)
        inc = generate_brownian(2, 4, 1, g)
        c = coarsen_increments(inc)
        assert c.shape == (4, 4, 1)
        np.testing.assert_allclose(c[0], inc[0] + inc[1])
        with pytest.raises(ValueError, match="even"):
            coarsen_increments(inc[:5])


class TestInitialStates:
    def test_point_law(self):
        x = initial_states(InitialLaw.point([1.5, -2.0]), 7, seed=0)
        assert x.shape == (7, 2)
        assert np.all(x == np.array([1.5, -2.0]))

    def test_gaussian_law_moments(self):
        law = InitialLaw.gaussian([1.0], [[4.0]])
        x = initial_states(law, 50_000, seed=1)
        assert x.mean() == pytest.approx(1.0, abs=4 * 2.0 / math.sqrt(50_000))
        assert x.var() == pytest.approx(4.0, rel=0.05)

    def test_covariance_must_be_symmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            InitialLaw.gaussian([0.0, 0.0], [[1.0, 0.5], [0.2, 1.0]])

    def test_covariance_must_be_psd(self):
        law = InitialLaw.gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ValueError, match="positive definite"):
            initial_states(law, 3, seed=0)


class TestInteracting:
    def test_driftless_unit_noise_is_brownian(self):
        bundle = simulate_interacting(
            _const_model(), InitialLaw.point([0.0]), TimeGrid(1.0, 50),
            100_000, seed=2)
        x = bundle.states[-1, :, 0]
        assert abs(x.mean()) < 4.0 / math.sqrt(100_000)
        assert x.var() == pytest.approx(1.0, rel=0.10)

    def test_ensemble_mean_follows_its_ode(self):
        # d/dt E[X] = (a + c) E[X] when the drift couples to the mean
        inst = get_preset("meanfield-ou")
        grid = TimeGrid(1.0, 200)
        bundle = simulate_interacting(inst.model, inst.law, grid, 20_000, seed=7)
        mean = empirical_statistics(bundle.snapshot(200), inst.model.functionals)[0]
        assert mean == pytest.approx(math.exp(-0.5), abs=0.01)

    def test_interaction_kernel_run_is_stable(self):
        inst = get_preset("example5-1")
        tops = []
        for M in (200, 400):
            bundle = simulate_interacting(inst.model, inst.law,
                                          TimeGrid(1.0, M), 10_000, seed=4)
            tops.append(float(moment_curve(bundle, 2).max()))
        assert np.isfinite(tops).all()
        assert abs(tops[1] - tops[0]) < 0.05 * tops[0]

    def test_blowup_reports_step_and_particle(self):
        def b(t, x, s):
            return x ** 3

        model = CoefficientModel(
            d=1, m=1, functionals=(),
            b=b, sigma=lambda t, x, s: np.ones(x.shape[:-1] + (1, 1)),
            b_static=True, sigma_static=True)
        law = InitialLaw.point([1e160])
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(SimulationError, match=r"step 1, particle 0"):
                simulate_interacting(model, law, TimeGrid(1.0, 10), 2, seed=0)

    def test_bundle_accessors(self):
        bundle = simulate_interacting(
            _const_model(), InitialLaw.point([0.0]), TimeGrid(1.0, 5), 4, seed=3)
        np.testing.assert_array_equal(bundle.snapshot(2).points,
                                      bundle.states[2])
        np.testing.assert_array_equal(bundle.path(1).states,
                                      bundle.states[:, 1, :])
        np.testing.assert_array_equal(bundle.path(1).increments,
                                      bundle.increments[:, 1, :])

    def test_determinism(self):
        inst = get_preset("example5-2")
        a = simulate_interacting(inst.model, inst.law, TimeGrid(1.0, 20), 64, seed=8)
        b = simulate_interacting(inst.model, inst.law, TimeGrid(1.0, 20), 64, seed=8)
        assert np.array_equal(a.states, b.states)


class TestFrozenFlow:
    def test_no_coupling_means_identical_runs(self):
        # with q = 0 the frozen solve coincides bitwise with the live one
        inst = get_preset("ou")
        grid = TimeGrid(1.0, 40)
        live = simulate_interacting(inst.model, inst.law, grid, 256, seed=5)
        flow = StatisticFlow(grid.times(), np.zeros((41, 0)))
        frozen = simulate_frozen_flow(inst.model, inst.law, grid, 256, seed=5,
                                      flow=flow)
        assert np.array_equal(live.states, frozen.states)

    def test_exact_mean_curve_is_a_fixed_point(self):
        inst = get_preset("meanfield-ou")
        grid = TimeGrid(1.0, 200)
        curve = np.exp(-0.5 * grid.times())[:, None]
        frozen = simulate_frozen_flow(inst.model, inst.law, grid, 20_000, seed=7,
                                      flow=StatisticFlow(grid.times(), curve))
        mean = empirical_statistics(frozen.snapshot(200),
                                    inst.model.functionals)[0]
        assert mean == pytest.approx(math.exp(-0.5), abs=0.01)

    def test_flow_grid_mismatch(self):
        inst = get_preset("meanfield-ou")
        grid = TimeGrid(1.0, 10)
        flow = StatisticFlow(TimeGrid(1.0, 20).times(), np.zeros((21, 1)))
        with pytest.raises(ValueError, match="does not match grid"):
            simulate_frozen_flow(inst.model, inst.law, grid, 8, seed=0, flow=flow)

    def test_realized_flow_matches_cloud_statistics(self):
        inst = get_preset("meanfield-ou")
        grid = TimeGrid(1.0, 30)
        bundle = simulate_interacting(inst.model, inst.law, grid, 500, seed=6)
        for k in (0, 15, 30):
            s = empirical_statistics(bundle.snapshot(k), inst.model.functionals)
            np.testing.assert_allclose(bundle.realized_flow.stats[k], s)


class TestMomentCurve:
    def test_frozen_zero_dynamics(self):
        model = _const_model(vol=0.0)
        bundle = simulate_interacting(model, InitialLaw.point([0.0]),
                                      TimeGrid(1.0, 10), 16, seed=0)
        np.testing.assert_array_equal(moment_curve(bundle, 2), np.zeros(11))

    def test_brownian_second_moment_grows_linearly(self):
        bundle = simulate_interacting(_const_model(), InitialLaw.point([0.0]),
                                      TimeGrid(1.0, 50), 20_000, seed=1)
        curve = moment_curve(bundle, 2)
        np.testing.assert_allclose(curve, TimeGrid(1.0, 50).times(), atol=0.05)

    def test_multiplicative_noise_second_moment(self):
        # E[X^2] solves m' = (2 mu + s^2) m for linear coefficient fields
        inst = get_preset("gbm")
        grid = TimeGrid(1.0, 200)
        bundle = simulate_interacting(inst.model, inst.law, grid, 10_000, seed=2)
        expect = np.exp((2.0 * 1.0 + 0.05 ** 2) * grid.times())
        np.testing.assert_allclose(moment_curve(bundle, 2), expect, rtol=0.02)

    def test_order_validation(self):
        bundle = simulate_interacting(_const_model(), InitialLaw.point([0.0]),
                                      TimeGrid(1.0, 4), 4, seed=0)
        with pytest.raises(ValueError, match="order"):
            moment_curve(bundle, 0.0)


def test_error_shrinks_with_joint_refinement():
    # halving dt while quadrupling N should win in most seeds
    inst = get_preset("meanfield-ou")
    target = math.exp(-0.5)
    wins = 0
    for seed in range(10):
        errs = []
        for n, steps in ((2000, 50), (8000, 100)):
            b = simulate_interacting(inst.model, inst.law,
                                     TimeGrid(1.0, steps), n, seed)
            m = empirical_statistics(b.snapshot(steps),
                                     inst.model.functionals)[0]
            errs.append(abs(m - target))
        wins += errs[1] < errs[0]
    assert wins >= 8


def test_second_moment_bounded_across_presets():
    # sup_t E|X|^2 <= C (1 + E|xi|^2) with a stable C under refinement
    for name in ("bm", "ou", "gbm", "meanfield-ou", "example5-1", "example5-2"):
        inst = get_preset(name)
        law = inst.law
        if law.kind == "point":
            init2 = float(np.sum(law.mean ** 2))
        else:
            init2 = float(np.sum(law.mean ** 2) + np.trace(law.cov))
        cs = []
        for n, steps in ((2000, 100), (4000, 200)):
            bundle = simulate_interacting(inst.model, law,
                                          TimeGrid(1.0, steps), n, seed=3)
            cs.append(float(moment_curve(bundle, 2).max()) / (1.0 + init2))
        assert cs[1] < 2.0 * cs[0], name
        assert cs[0] < 2.0 * cs[1], name
