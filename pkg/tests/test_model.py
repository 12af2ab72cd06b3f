import math

import numpy as np
import pytest
from scipy import integrate

from src.engine import model
from src.engine.errors import InputValidationError
from src.engine.model import (
    Configuration,
    Hyperparams,
    LossSpec,
    MatchingMatrix,
    PoseParams,
    UNMATCHED,
)


class TestConfiguration:
    def test_shapes(self):
        conf = Configuration(np.zeros((4, 3)))
        assert conf.size == 4
        assert conf.dim == 3
        assert not conf.has_colours

    def test_empty_configuration_is_allowed(self):
        assert Configuration(np.zeros((0, 2))).size == 0

    def test_rejects_bad_dimension(self):
        with pytest.raises(InputValidationError):
            Configuration(np.zeros((3, 4)))

    def test_rejects_non_finite(self):
        with pytest.raises(InputValidationError):
            Configuration(np.array([[0.0, np.nan]]))

    def test_colour_length_must_match(self):
        with pytest.raises(InputValidationError):
            Configuration(np.zeros((2, 2)), colours=("A",))


class TestMatchingMatrix:
    def test_from_pairs(self):
        M = MatchingMatrix.from_pairs([(0, 2), (2, 0)], m=3, n=3)
        assert M.match_of_x == (2, UNMATCHED, 0)
        assert M.match_of_y() == (2, UNMATCHED, 0)
        assert M.L == 2
        np.testing.assert_array_equal(M.to_dense().sum(axis=0), [1, 0, 1])

    def test_rejects_double_use_of_y(self):
        with pytest.raises(InputValidationError, match="one-to-one"):
            MatchingMatrix((1, 1), n=2)

    def test_rejects_double_use_of_x(self):
        with pytest.raises(InputValidationError, match="one-to-one"):
            MatchingMatrix.from_pairs([(0, 0), (0, 1)], m=2, n=2)

    def test_with_and_without(self):
        M = MatchingMatrix.empty(2, 2).with_pair(1, 0)
        assert M.pairs() == [(1, 0)]
        assert M.without_x(1).L == 0

    def test_matching_counts(self):
        assert sum(1 for _ in model.enumerate_matchings(3, 3)) == 34
        assert sum(1 for _ in model.enumerate_matchings(2, 3)) == 13
        assert sum(1 for _ in model.enumerate_matchings(0, 4)) == 1


class TestPriorMatchCount:
    @pytest.mark.parametrize("d_ratio", [0.1, 1.0, 10.0])
    def test_matches_enumeration(self, d_ratio):
        for m in range(5):
            for n in range(5):
                weights = np.zeros(min(m, n) + 1)
                for M in model.enumerate_matchings(m, n):
                    weights[M.L] += d_ratio ** M.L
                np.testing.assert_allclose(
                    model.prior_match_count_pmf(m, n, d_ratio), weights / weights.sum(), rtol=1e-10
                )

    def test_elicited_mode_is_close_to_guess(self):
        for m, n, L_bar in [(40, 50, 20.0), (10, 10, 3.0), (100, 80, 55.5)]:
            pmf = model.prior_match_count_pmf(m, n, model.elicit_d_ratio(m, n, L_bar))
            assert abs(int(np.argmax(pmf)) - L_bar) <= 1.0

    def test_elicitation_range(self):
        with pytest.raises(InputValidationError):
            model.elicit_d_ratio(5, 5, 5.0)
        with pytest.raises(InputValidationError):
            model.elicit_d_ratio(5, 5, 0.0)

    def test_prior_over_matchings_normalises(self):
        hyper = Hyperparams(kappa_match=1.0, prior_count_ratio=0.7)
        total = sum(math.exp(model.log_prior_matching(M, hyper)) for M in model.enumerate_matchings(3, 4))
        assert total == pytest.approx(1.0)

    def test_prior_over_matchings_needs_ratio(self):
        with pytest.raises(InputValidationError):
            model.log_prior_matching(MatchingMatrix.empty(2, 2), Hyperparams(kappa_match=1.0))


class TestPairWeights:
    def test_matrix_agrees_with_single_pair(self, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        logw = model.pair_log_weight_matrix(x, y, unit_pose, small_hyper)
        for j in range(x.size):
            for k in range(y.size):
                expected = model.pair_log_weight(x.points[j], y.points[k], unit_pose, small_hyper)
                assert logw[j, k] == pytest.approx(expected)

    def test_exact_pair_value(self):
        hyper = Hyperparams(kappa_match=3.0)
        pose = PoseParams(np.eye(2), np.zeros(2), 0.5)
        value = model.pair_log_weight(np.array([1.0, 0.0]), np.zeros(2), pose, hyper)
        # 3 * phi_2(z / (sigma sqrt 2)) / (sigma sqrt 2)^2 with |z| = 1, sigma^2 = 1/4
        expected = math.log(3.0) - math.log(2 * math.pi) - 2 * math.log(0.5 * math.sqrt(2)) - 1.0
        assert value == pytest.approx(expected)

    def test_log_joint_differences_are_pair_weights(self, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        logw = model.pair_log_weight_matrix(x, y, unit_pose, small_hyper)
        base = model.log_joint(MatchingMatrix.empty(3, 3), unit_pose, x, y, small_hyper)
        M = MatchingMatrix.from_pairs([(0, 0), (1, 2)], 3, 3)
        gain = model.log_joint(M, unit_pose, x, y, small_hyper) - base
        assert gain == pytest.approx(logw[0, 0] + logw[1, 2])

    def test_colour_affinity(self):
        x = Configuration(np.zeros((2, 2)), colours=("A", "B"))
        y = Configuration(np.ones((2, 2)), colours=("A", None))
        hyper = Hyperparams(kappa_match=1.0, gamma=1.5, delta=-0.5)
        np.testing.assert_allclose(model.colour_affinity_matrix(x, y, hyper), [[1.5, 0.0], [-0.5, 0.0]])

    def test_zero_colour_effect_is_colour_free(self, unit_pose):
        points_x = np.array([[0.0, 0.0], [2.0, 1.0]])
        points_y = np.array([[-1.0, 1.0], [1.0, 2.0]])
        hyper = Hyperparams(kappa_match=1.0)
        coloured = model.pair_log_weight_matrix(
            Configuration(points_x, colours=("A", "B")), Configuration(points_y, colours=("B", "B")), unit_pose, hyper
        )
        plain = model.pair_log_weight_matrix(Configuration(points_x), Configuration(points_y), unit_pose, hyper)
        np.testing.assert_array_equal(coloured, plain)

    def test_log_joint_shape_mismatch(self, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        with pytest.raises(InputValidationError):
            model.log_joint(MatchingMatrix.empty(2, 3), unit_pose, x, y, small_hyper)

    def test_exact_posterior_sums_to_one(self, small_pair, small_hyper, unit_pose):
        x, y = small_pair
        matchings, probs = model.exact_matching_posterior(unit_pose, x, y, small_hyper)
        assert len(matchings) == 34
        assert probs.sum() == pytest.approx(1.0)


class TestPosePriors:
    def test_sigma_prior_integrates_to_one(self):
        hyper = Hyperparams(kappa_match=1.0, alpha=2.0, beta=1.0)
        total, _ = integrate.quad(lambda s: math.exp(model.log_prior_sigma(s, hyper)), 0.0, np.inf)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_sigma_prior_median(self):
        hyper = Hyperparams(kappa_match=1.0, alpha=3.0, beta=2.0)
        median = model.sigma_prior_median(hyper)
        below, _ = integrate.quad(lambda s: math.exp(model.log_prior_sigma(s, hyper)), 0.0, median)
        assert below == pytest.approx(0.5, abs=1e-6)

    def test_rotation_prior_is_trace(self):
        F0 = np.array([[1.0, 2.0], [3.0, 4.0]])
        hyper = Hyperparams(kappa_match=1.0, F0=F0)
        A = np.array([[0.0, -1.0], [1.0, 0.0]])
        assert model.log_prior_rotation(A, hyper) == pytest.approx(np.trace(F0.T @ A))

    def test_singular_transform(self, small_hyper):
        pose = PoseParams(np.zeros((2, 2)), np.zeros(2), 1.0)
        with pytest.raises(InputValidationError, match="singular"):
            model.log_pose_prior(pose, 3, small_hyper)


class TestHyperparamsAndLoss:
    def test_invalid_hyperparams(self):
        with pytest.raises(InputValidationError):
            Hyperparams(kappa_match=0.0)
        with pytest.raises(InputValidationError):
            Hyperparams(kappa_match=1.0, p_star=1.0)
        with pytest.raises(InputValidationError):
            Hyperparams(kappa_match=1.0, beta=-1.0)

    def test_symmetric_losses(self):
        assert LossSpec.from_losses(0.0, 1.0, 1.0, 0.0).K == pytest.approx(0.5)

    def test_loss_validation(self):
        with pytest.raises(InputValidationError):
            LossSpec(0.0)
        with pytest.raises(InputValidationError):
            LossSpec(1.5)
        with pytest.raises(InputValidationError):
            LossSpec.from_losses(1.0, 0.0, 1.0, 0.0)
        assert LossSpec(1.0).K == 1.0
