import math
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from src.engine import estimation, geometry, model, sampler
from src.engine.errors import InputValidationError
from src.engine.model import Configuration, Hyperparams, MatchingMatrix, PoseParams
from src.engine.sampler import SweepSchedule
from src.engine.synthetic import GenerativeSpec, generate


def grid_cdf(log_density, low, high, size=20_001):
    grid = np.linspace(low, high, size)
    dens = np.exp(log_density(grid) - np.max(log_density(grid)))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    return lambda t: np.interp(t, grid, cdf)


def fixed_pose_state(x, y, hyper, pose, rng, pinned_pairs=()):
    state = sampler.initial_state(x, y, hyper, SweepSchedule(sweeps=0), rng, pinned_pairs=pinned_pairs)
    state.pose = pose.copy()
    return sampler.resync(state, x, y, hyper)


def matching_kernel(matchings, logw, p_star):
    """Transition matrix of one M update, built from the proposal description."""
    m, n = logw.shape
    index = {M.match_of_x: i for i, M in enumerate(matchings)}
    T = np.zeros((len(matchings), len(matchings)))
    pick = 1.0 / (m + n)

    for i, M in enumerate(matchings):
        match_of_y = M.match_of_y()
        free_x = [j for j in range(m) if M.match_of_x[j] == model.UNMATCHED]
        free_y = [k for k in range(n) if match_of_y[k] == model.UNMATCHED]

        def move(target, prob, log_ratio):
            a = prob * min(1.0, math.exp(log_ratio))
            T[i, index[target.match_of_x]] += a
            T[i, i] += prob - a

        for side in ("x", "y"):
            size = m if side == "x" else n
            for p in range(size):
                partner = M.match_of_x[p] if side == "x" else match_of_y[p]
                free_other = free_y if side == "x" else free_x
                pair = (lambda a, b: (a, b)) if side == "x" else (lambda a, b: (b, a))
                if partner == model.UNMATCHED:
                    if not free_other:
                        T[i, i] += pick
                        continue
                    for q in free_other:
                        j, k = pair(p, q)
                        log_ratio = sampler.log_accept_add(logw[j, k], p_star, len(free_other))
                        move(M.with_pair(j, k), pick / len(free_other), log_ratio)
                    continue
                j, k = pair(p, partner)
                deleted = M.without_x(j)
                move(deleted, pick * p_star, sampler.log_accept_delete(logw[j, k], p_star, len(free_other) + 1))
                if not free_other:
                    T[i, i] += pick * (1 - p_star)
                    continue
                for q in free_other:
                    j2, k2 = pair(p, q)
                    target = deleted.with_pair(j2, k2)
                    log_ratio = sampler.log_accept_switch(logw[j2, k2], logw[j, k])
                    move(target, pick * (1 - p_star) / len(free_other), log_ratio)
    return T


class TestAcceptanceRatios:
    def test_helpers(self):
        assert sampler.log_accept_add(-1.0, 0.5, 4) == pytest.approx(-1.0 + math.log(2.0))
        assert sampler.log_accept_delete(-1.0, 0.5, 4) == pytest.approx(1.0 - math.log(2.0))
        assert sampler.log_accept_switch(-0.5, -2.0) == pytest.approx(1.5)

    @pytest.mark.parametrize("p_star", [0.2, 0.5, 0.9])
    def test_detailed_balance(self, rng, p_star):
        x = Configuration(rng.normal(size=(2, 2)))
        y = Configuration(rng.normal(size=(2, 2)))
        hyper = Hyperparams(kappa_match=1.5, p_star=p_star)
        pose = PoseParams(np.eye(2), np.zeros(2), 0.7)
        matchings, post = model.exact_matching_posterior(pose, x, y, hyper)
        T = matching_kernel(matchings, model.pair_log_weight_matrix(x, y, pose, hyper), p_star)

        np.testing.assert_allclose(T.sum(axis=1), 1.0)
        flow = post[:, None] * T
        np.testing.assert_allclose(flow, flow.T, atol=1e-12)


class TestMatchingUpdate:
    def test_two_by_two_converges_to_enumeration(self, rng):
        x = Configuration(np.array([[0.0, 0.0], [1.0, 0.2]]))
        y = Configuration(np.array([[0.3, -0.1], [0.9, 0.6]]))
        hyper = Hyperparams(kappa_match=2.0)
        pose = PoseParams(np.eye(2), np.zeros(2), 0.5)
        matchings, post = model.exact_matching_posterior(pose, x, y, hyper)
        state = fixed_pose_state(x, y, hyper, pose, rng)

        counts = Counter()
        for _ in range(200_000):
            sampler.update_matching(state, x, y, hyper, rng)
            counts[tuple(state.match_of_x)] += 1
        empirical = np.array([counts[M.match_of_x] for M in matchings]) / 200_000
        assert 0.5 * np.abs(empirical - post).sum() < 0.02

    @pytest.mark.slow
    def test_three_by_three_converges_to_enumeration(self, rng, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        matchings, post = model.exact_matching_posterior(unit_pose, x, y, small_hyper)
        assert len(matchings) == 34
        state = fixed_pose_state(x, y, small_hyper, unit_pose, rng)

        counts = Counter()
        updates = 1_000_000
        for _ in range(updates):
            sampler.update_matching(state, x, y, small_hyper, rng)
            counts[tuple(state.match_of_x)] += 1
        empirical = np.array([counts[M.match_of_x] for M in matchings]) / updates
        assert 0.5 * np.abs(empirical - post).sum() < 0.02

    def test_cached_log_joint_tracks_matching(self, rng, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        state = fixed_pose_state(x, y, small_hyper, unit_pose, rng)
        for _ in range(500):
            sampler.update_matching(state, x, y, small_hyper, rng)
            expected = model.log_joint(state.matching, state.pose, x, y, small_hyper)
            assert state.log_joint == pytest.approx(expected, abs=1e-9)
            assert state.n_u == sum(1 for j in state.match_of_y if j == model.UNMATCHED)

    def test_pinned_points_are_never_moved(self, rng, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        state = fixed_pose_state(x, y, small_hyper, unit_pose, rng, pinned_pairs=[(1, 2)])
        for _ in range(2000):
            sampler.update_matching(state, x, y, small_hyper, rng)
            assert state.match_of_x[1] == 2
        assert state.stats.pinned > 0

    def test_empty_configuration(self, rng, small_hyper):
        x = Configuration(np.zeros((0, 2)))
        y = Configuration(np.ones((2, 2)))
        state = fixed_pose_state(x, y, small_hyper, PoseParams(np.eye(2), np.zeros(2), 1.0), rng)
        for _ in range(20):
            sampler.update_matching(state, x, y, small_hyper, rng)
        assert state.L == 0
        assert state.stats.null["add"] == 20

    def test_emptied_matching_leaves_no_residue(self, rng, small_pair, small_hyper):
        x, y = small_pair
        schedule = SweepSchedule(sweeps=0, sample_rotation=True)
        state = sampler.initial_state(x, y, small_hyper, schedule, rng, rotation=0.3)
        emptied = 0
        previous = state.L
        for _ in range(5000):
            sampler.update_matching(state, x, y, small_hyper, rng)
            if state.L == 0 and previous > 0:
                emptied += 1
                assert not np.any(state._sums.cross(state.pose.tau))
                assert not np.any(state._sums.sx) and state._sums.sxx == 0.0
                theta = sampler.update_rotation_2d(state, x, y, small_hyper, rng).rotation
                assert -math.pi < theta <= math.pi
            previous = state.L
        assert emptied > 0


class TestContinuousUpdates:
    def test_tau_moments(self, rng, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        pairs = [(0, 0), (1, 2)]
        state = fixed_pose_state(x, y, small_hyper, unit_pose, rng, pinned_pairs=pairs)
        draws = np.empty((20_000, 2))
        for i in range(len(draws)):
            draws[i] = sampler.gibbs_update_tau(state, x, y, small_hyper, rng).pose.tau

        residual = sum(x.points[j] - unit_pose.A @ y.points[k] for j, k in pairs)
        precision = 1.0 / small_hyper.sigma_tau ** 2 + len(pairs) / (2.0 * unit_pose.sigma ** 2)
        mean = (residual / (2.0 * unit_pose.sigma ** 2)) / precision
        var = 1.0 / precision
        se_mean = math.sqrt(var / len(draws))
        se_var = var * math.sqrt(2.0 / (len(draws) - 1))
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se_mean)
        assert np.all(np.abs(draws.var(axis=0, ddof=1) - var) < 4 * se_var)

    def test_sigma_moments(self, rng, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        pairs = [(0, 1), (2, 0)]
        state = fixed_pose_state(x, y, small_hyper, unit_pose, rng, pinned_pairs=pairs)
        omegas = np.array([
            sampler.gibbs_update_sigma(state, x, y, small_hyper, rng).pose.sigma ** -2 for _ in range(20_000)
        ])

        sq = sum(float(np.sum((x.points[j] - y.points[k] - unit_pose.tau) ** 2)) for j, k in pairs)
        shape = small_hyper.alpha + 0.5 * 2 * len(pairs)
        rate = small_hyper.beta + 0.25 * sq
        se = math.sqrt(shape) / rate / math.sqrt(len(omegas))
        assert abs(omegas.mean() - shape / rate) < 4 * se

    def test_rotation_2d_conditional(self, rng, small_pair, small_hyper):
        x, y = small_pair
        pairs = [(0, 0), (1, 1), (2, 2)]
        schedule = SweepSchedule(sweeps=0, sample_rotation=True)
        state = sampler.initial_state(x, y, small_hyper, schedule, rng, rotation=0.0, pinned_pairs=pairs)
        tau, sigma = state.pose.tau.copy(), 0.8
        state.pose.sigma = sigma
        sampler.resync(state, x, y, small_hyper)

        F = sum(np.outer(x.points[j] - tau, y.points[k]) for j, k in pairs) / (2.0 * sigma ** 2)
        a, b = F[0, 0] + F[1, 1], F[1, 0] - F[0, 1]
        cdf = grid_cdf(lambda t: a * np.cos(t) + b * np.sin(t), -math.pi, math.pi)

        draws = [sampler.update_rotation_2d(state, x, y, small_hyper, rng).rotation for _ in range(50_000)]
        assert stats.kstest(draws, cdf).statistic < 0.01
        np.testing.assert_allclose(state.pose.A, geometry.rotation_matrix_2d(draws[-1]))

    def test_rotation_2d_needs_rotation_mode(self, rng, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        state = fixed_pose_state(x, y, small_hyper, unit_pose, rng)
        with pytest.raises(InputValidationError):
            sampler.update_rotation_2d(state, x, y, small_hyper, rng)


class TestTheta13:
    def test_target_outside_interval(self):
        assert sampler.theta13_log_target(math.pi / 2, 1.0, 1.0) == -math.inf
        assert sampler.theta13_log_target(0.0, 2.0, -1.0) == pytest.approx(2.0)

    def test_stays_inside_interval(self, rng):
        theta = 1.5
        for _ in range(5000):
            theta, _ = sampler.theta13_metropolis_step(theta, 30.0, 30.0, 0.5, rng)
            assert abs(theta) < math.pi / 2

    @pytest.mark.slow
    @pytest.mark.parametrize("half_width, steps", [(0.5, 400_000), (0.1, 4_000_000)])
    def test_sub_chain_matches_target(self, rng, half_width, steps):
        a, b = 2.0, -1.0
        cdf = grid_cdf(
            lambda t: a * np.cos(t) + b * np.sin(t) + np.log(np.maximum(np.cos(t), 1e-300)),
            -math.pi / 2, math.pi / 2,
        )
        theta = 0.0
        draws = np.empty(steps)
        for i in range(steps):
            theta, _ = sampler.theta13_metropolis_step(theta, a, b, half_width, rng)
            draws[i] = theta
        assert stats.kstest(draws[1000:], cdf).statistic < 0.015

    def test_rotation_3d_update(self, rng, random_rotation):
        y = Configuration(rng.normal(size=(6, 3)))
        x = Configuration(y.points @ random_rotation(3, rng).T)
        hyper = Hyperparams(kappa_match=1.0)
        schedule = SweepSchedule(sweeps=0, sample_rotation=True)
        pairs = [(i, i) for i in range(6)]
        state = sampler.initial_state(x, y, hyper, schedule, rng, pinned_pairs=pairs)
        for _ in range(200):
            sampler.update_rotation_3d(state, x, y, hyper, rng, half_width=0.3)
            assert abs(state.rotation.theta13) < math.pi / 2
            assert geometry.orthogonality_residual(state.pose.A) < 1e-10
        assert state.stats.proposed["theta13"] == 200
        expected = model.log_joint(state.matching, state.pose, x, y, hyper, rotation=True)
        assert state.log_joint == pytest.approx(expected, abs=1e-8)


class TestSchedule:
    def test_validation(self):
        with pytest.raises(InputValidationError):
            SweepSchedule(sweeps=10, burn_in=20)
        with pytest.raises(InputValidationError):
            SweepSchedule(sweeps=10, thin=0)
        with pytest.raises(InputValidationError):
            SweepSchedule(sweeps=10, m_updates_per_sweep=0)

    def test_retained_count(self):
        assert SweepSchedule(sweeps=100, burn_in=20, thin=10).retained_count == 8
        assert SweepSchedule(sweeps=20, burn_in=20).retained_count == 0


class TestRunChain:
    def test_same_seed_same_trace(self, small_pair, small_hyper):
        x, y = small_pair
        schedule = SweepSchedule(sweeps=300, burn_in=100, thin=5, sample_rotation=True, seed=7)
        first = sampler.run_chain(x, y, small_hyper, schedule)
        second = sampler.run_chain(x, y, small_hyper, schedule)
        np.testing.assert_array_equal(first.log_joint, second.log_joint)
        np.testing.assert_array_equal(first.tau, second.tau)
        np.testing.assert_array_equal(first.angles, second.angles)
        assert all(np.array_equal(a, b) for a, b in zip(first.matches, second.matches))

    def test_burn_in_only_gives_empty_trace(self, small_pair, small_hyper):
        x, y = small_pair
        trace = sampler.run_chain(x, y, small_hyper, SweepSchedule(sweeps=50, burn_in=50))
        assert trace.is_empty
        assert trace.final_state is not None
        assert trace.to_frame().empty

    def test_retained_sweeps(self, small_pair, small_hyper):
        x, y = small_pair
        trace = sampler.run_chain(x, y, small_hyper, SweepSchedule(sweeps=100, burn_in=20, thin=10))
        np.testing.assert_array_equal(trace.sweeps, [30, 40, 50, 60, 70, 80, 90, 100])
        assert list(trace.to_frame().columns) == ["sweep", "log_joint", "tau_1", "tau_2", "sigma", "L"]

    def test_final_log_joint_matches_model(self, small_pair, small_hyper):
        x, y = small_pair
        schedule = SweepSchedule(sweeps=500, sample_rotation=True, seed=3, check_every=10_000)
        state = sampler.run_chain(x, y, small_hyper, schedule).final_state
        expected = model.log_joint(state.matching, state.pose, x, y, small_hyper, rotation=True)
        assert state.log_joint == pytest.approx(expected, abs=1e-8)

    def test_move_totals(self, small_pair, small_hyper):
        x, y = small_pair
        schedule = SweepSchedule(sweeps=400, m_updates_per_sweep=3, seed=11)
        trace = sampler.run_chain(x, y, small_hyper, schedule, pinned_pairs=[(0, 0)])
        proposed = trace.acceptance["proposed"]
        total = proposed["add"] + proposed["delete"] + proposed["switch"] + trace.acceptance["pinned_selections"]
        assert total == 400 * 3
        assert proposed["theta13"] == 0

    def test_pinned_pairs_in_every_sample(self, small_pair, small_hyper):
        x, y = small_pair
        trace = sampler.run_chain(x, y, small_hyper, SweepSchedule(sweeps=200), pinned_pairs=[(2, 1)])
        for pairs in trace.matches:
            assert [2, 1] in pairs.tolist()

    def test_zero_colour_effect_leaves_trace_unchanged(self, small_pair, small_hyper):
        x, y = small_pair
        coloured_x = Configuration(x.points, colours=("A", "B", "A"))
        coloured_y = Configuration(y.points, colours=("B", "B", "A"))
        schedule = SweepSchedule(sweeps=300, seed=5)
        plain = sampler.run_chain(x, y, small_hyper, schedule)
        coloured = sampler.run_chain(coloured_x, coloured_y, small_hyper, schedule)
        np.testing.assert_array_equal(plain.log_joint, coloured.log_joint)
        np.testing.assert_array_equal(plain.match_counts(), coloured.match_counts())

    def test_continues_from_state(self, small_pair, small_hyper):
        x, y = small_pair
        first = sampler.run_chain(x, y, small_hyper, SweepSchedule(sweeps=100, seed=1))
        second = sampler.run_chain(x, y, small_hyper, SweepSchedule(sweeps=10, seed=2), init=first.final_state)
        assert second.size == 10
        assert first.final_state.stats.proposed["add"] <= second.final_state.stats.proposed["add"]

    def test_rejects_mixed_dimensions(self, small_hyper):
        x = Configuration(np.zeros((2, 2)))
        y = Configuration(np.zeros((2, 3)))
        with pytest.raises(InputValidationError, match="dimension"):
            sampler.run_chain(x, y, small_hyper, SweepSchedule(sweeps=1))

    def test_fixed_transform_shape(self, small_pair, small_hyper):
        x, y = small_pair
        with pytest.raises(InputValidationError):
            sampler.run_chain(x, y, small_hyper, SweepSchedule(sweeps=1), fixed_transform=np.eye(3))

    @pytest.mark.parametrize("d", [2, 3])
    @pytest.mark.parametrize("seed", range(4))
    def test_rotation_chain_with_weak_matches(self, random_rotation, d, seed):
        # weak pair weights keep the matching dropping back to empty
        rng = np.random.default_rng(100 + seed)
        y = Configuration(rng.uniform(0, 10, size=(8, d)))
        x = Configuration(y.points @ random_rotation(d, rng).T + rng.normal(scale=0.3, size=(8, d)))
        hyper = Hyperparams(kappa_match=5.0)
        schedule = SweepSchedule(
            sweeps=3000, burn_in=1000, thin=10, m_updates_per_sweep=10, sample_rotation=True, seed=seed,
        )
        trace = sampler.run_chain(x, y, hyper, schedule)

        assert trace.size == 200
        assert np.all(np.isfinite(trace.log_joint))
        for A in trace.rotations:
            assert geometry.orthogonality_residual(A) < 1e-10
        state = trace.final_state
        expected = model.log_joint(state.matching, state.pose, x, y, hyper, rotation=True)
        assert state.log_joint == pytest.approx(expected, abs=1e-8)

    @pytest.mark.slow
    def test_colour_effect_raises_like_coloured_matches(self):
        rng = np.random.default_rng(12)
        spec = GenerativeSpec(
            lambda_rate=0.05,
            region_low=[0.0, 0.0],
            region_high=[30.0, 30.0],
            p_x=0.3,
            p_y=0.3,
            rho=2.0,
            pose=PoseParams(np.eye(2), np.zeros(2), 1.0),
            colour_labels=["A", "B", "C", "D"],
            colour_probs=[0.25, 0.25, 0.25, 0.25],
            gamma=6.0,
        )
        plain = Hyperparams(kappa_match=spec.kappa_match, sigma_tau=5.0, alpha=2.0, beta=2.0)
        coloured = Hyperparams(kappa_match=spec.kappa_match, sigma_tau=5.0, alpha=2.0, beta=2.0, gamma=1.0, delta=-0.5)

        diffs = []
        for replicate in range(20):
            instance = generate(spec, rng)
            x, y = instance.x, instance.y
            like = [(j, k) for j, k in instance.truth.pairs() if x.colours[j] == y.colours[k]]
            if not like:
                continue
            schedule = SweepSchedule(sweeps=6000, burn_in=1000, thin=5, m_updates_per_sweep=10, seed=replicate)
            means = []
            for hyper in (plain, coloured):
                p = estimation.match_probabilities(sampler.run_chain(x, y, hyper, schedule, fixed_transform=np.eye(2))).p
                means.append(np.mean([p[j, k] for j, k in like]))
            diffs.append(means[1] - means[0])

        assert len(diffs) >= 15
        assert np.mean(diffs) > 0.0

    @pytest.mark.slow
    def test_gel_scale_run_is_fast(self):
        rng = np.random.default_rng(1)
        y = Configuration(rng.uniform(0, 100, size=(35, 2)))
        x = Configuration(y.points + rng.normal(scale=1.0, size=(35, 2)))
        hyper = Hyperparams(kappa_match=50.0)
        started = time.perf_counter()
        trace = sampler.run_chain(x, y, hyper, SweepSchedule(sweeps=120_000, burn_in=20_000, thin=10))
        assert time.perf_counter() - started < 30.0
        assert trace.size == 10_000


class TestSingleMatchJointLaw:
    @pytest.mark.slow
    def test_marginals_match_quadrature(self):
        x = Configuration(np.array([[0.5, 0.2]]))
        y = Configuration(np.array([[0.0, 0.0]]))
        hyper = Hyperparams(kappa_match=3.0, sigma_tau=2.0, alpha=3.0, beta=2.0)
        matchings = [MatchingMatrix.empty(1, 1), MatchingMatrix.from_pairs([(0, 0)], 1, 1)]
        r = x.points[0] - y.points[0]

        # tau is Gaussian given (M, sigma): integrate it out exactly, then
        # integrate sigma on a grid
        sigmas = np.linspace(0.02, 20.0, 4001)
        log_g = np.empty((2, len(sigmas)))
        centres = np.empty((2, len(sigmas)))
        scales = np.empty((2, len(sigmas)))
        for L, M in enumerate(matchings):
            for i, s in enumerate(sigmas):
                precision = 1.0 / hyper.sigma_tau ** 2 + L / (2.0 * s ** 2)
                mode = (L * r / (2.0 * s ** 2)) / precision
                pose = PoseParams(np.eye(2), mode, float(s))
                log_g[L, i] = model.log_joint(M, pose, x, y, hyper) + math.log(2.0 * math.pi / precision)
                centres[L, i] = mode[0]
                scales[L, i] = 1.0 / math.sqrt(precision)
        step = np.full(len(sigmas), sigmas[1] - sigmas[0])
        step[[0, -1]] *= 0.5
        weights = np.exp(log_g - log_g.max()) * step
        weights /= weights.sum()

        p_matched = weights[1].sum()
        sigma_cdf = np.cumsum(weights.sum(axis=0))
        t_grid = np.linspace(-8.0, 8.0, 801)
        tau_cdf = sum(
            weights[L] @ stats.norm.cdf((t_grid[None, :] - centres[L][:, None]) / scales[L][:, None])
            for L in range(2)
        )

        schedule = SweepSchedule(sweeps=200_000, burn_in=1000, seed=13)
        trace = sampler.run_chain(x, y, hyper, schedule)
        assert abs(trace.match_counts().mean() - p_matched) < 0.02
        assert stats.kstest(trace.sigma, lambda s: np.interp(s, sigmas, sigma_cdf)).statistic < 0.02
        assert stats.kstest(trace.tau[:, 0], lambda t: np.interp(t, t_grid, tau_cdf)).statistic < 0.02


class TestRecovery:
    @pytest.mark.slow
    def test_three_dimensional_instance(self, separated_3d):
        spec, instance, hyper = separated_3d
        assert 25 <= instance.truth.L <= 45
        truth = geometry.euler_angles_from_matrix(spec.pose.A)
        start = geometry.EulerAngles3(truth.theta12 + 0.05, truth.theta13 - 0.05, truth.theta23 + 0.05)
        schedule = SweepSchedule(
            sweeps=60_000, burn_in=10_000, thin=10, m_updates_per_sweep=10, sample_rotation=True, seed=21,
        )
        trace = sampler.run_chain(instance.x, instance.y, hyper, schedule, initial_rotation=start)

        summary = estimation.summarize(trace)
        declared = estimation.optimal_matching(estimation.match_probabilities(trace), 0.5)
        _, recall = estimation.precision_recall(declared, instance.truth.pairs())
        assert recall >= 0.9
        assert geometry.rotation_distance(summary.A_hat, spec.pose.A) < 0.1
        sd = np.sqrt(np.diag(summary.tau_cov))
        assert np.all(np.abs(summary.tau_mean - spec.pose.tau) < 3.0 * sd)
