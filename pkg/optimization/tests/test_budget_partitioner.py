import numpy as np
import pytest

from campaign.models import CampaignConfig, EpochObservation, MediaObjectAccumulators, WeightVector
from optimization.budget_partitioner import (
    PartitionerParams,
    exponentiated_update,
    loss_gradient,
    partition_step,
    quality,
    regularization_lambda,
)


class PartitionerTestBase:
    """Shared fixtures"""

    @pytest.fixture
    def params(self):
        return PartitionerParams(learning_rate=0.5, exploration_eta=1.0,
                                 regularization_discount=0.95, discount_gamma=0.87)

    @pytest.fixture
    def rng(self):
        return np.random.default_rng(7)

    @staticmethod
    def accumulators(clicks, budgets):
        acc = MediaObjectAccumulators.initial(len(clicks), initial_bid=1.0)
        return acc.model_copy(update={'disc_clicks': np.asarray(clicks, dtype=float),
                                      'disc_budgets': np.asarray(budgets, dtype=float)})


class TestQuality(PartitionerTestBase):

    def test_ratio_and_rescale(self):
        result = quality(self.accumulators([1, 2], [1, 1]))
        assert result.rescaled.tolist() == [0.5, 1.0]

    def test_symmetric(self):
        result = quality(self.accumulators([3, 3, 3], [2, 2, 2]), epoch_budget=6.0)
        assert result.rescaled.tolist() == [1.0, 1.0, 1.0]
        assert result.raw.tolist() == pytest.approx([9.0, 9.0, 9.0])

    def test_no_clicks(self):
        assert quality(self.accumulators([0, 0], [1, 1])).rescaled.tolist() == [0.0, 0.0]

    def test_no_budget_yet(self):
        result = quality(self.accumulators([1, 0], [2, 0]))
        assert result.raw.tolist() == [0.5, 0.0]
        assert result.rescaled.tolist() == [1.0, 0.0]


class TestRegularization(PartitionerTestBase):

    def test_first_day(self):
        assert regularization_lambda(1.0, 10, 0.95, 0) == pytest.approx(10.0)

    def test_decreasing(self):
        values = [regularization_lambda(1.0, 10, 0.95, day) for day in range(30)]
        assert all(later < earlier for earlier, later in zip(values, values[1:]))

    def test_constant_without_decay(self):
        assert regularization_lambda(2.0, 5, 1.0, 17) == pytest.approx(10.0)

    def test_invalid_eta(self):
        with pytest.raises(ValueError):
            regularization_lambda(0.0, 10, 0.95, 0)

    def test_clip_bound(self, params):
        assert params.clip_bound == 10 / 0.5

    def test_from_config(self):
        params = PartitionerParams.from_config(CampaignConfig())
        assert params.learning_rate == 0.5
        assert params.discount_gamma == 0.87


class TestLossGradient(PartitionerTestBase):

    def test_regularizer_vanishes_at_uniform(self):
        gradient = loss_gradient(np.ones(4), WeightVector.uniform(4), lam=10.0, alpha=0.5)
        assert gradient.tolist() == pytest.approx([-1.0] * 4)

    def test_pure_quality(self):
        w = WeightVector(weights=[0.9, 0.1])
        gradient = loss_gradient(np.array([0.5, 1.0]), w, lam=0.0, alpha=0.5)
        assert gradient.tolist() == [-0.5, -1.0]

    def test_clipping(self):
        gradient = loss_gradient(np.array([50.0, 0.0]), WeightVector.uniform(2), lam=0.0, alpha=1.0)
        assert gradient.tolist() == [-10.0, 0.0]

    def test_bound_respected(self, rng):
        for _ in range(200):
            w = WeightVector(weights=rng.dirichlet(np.ones(6)))
            alpha = rng.uniform(0.05, 5.0)
            gradient = loss_gradient(rng.uniform(0, 1, 6), w, lam=rng.uniform(0, 1000), alpha=alpha)
            assert np.all(np.abs(gradient) <= 10 / alpha)


class TestExponentiatedUpdate(PartitionerTestBase):

    def test_equal_gradient_keeps_weights(self):
        w = WeightVector(weights=[0.2, 0.3, 0.5])
        updated = exponentiated_update(w, [1.5, 1.5, 1.5], alpha=0.7)
        assert updated.weights.tolist() == pytest.approx([0.2, 0.3, 0.5], abs=1e-15)

    def test_negative_gradient_gains(self):
        updated = exponentiated_update(WeightVector.uniform(3), [-1.0, 0.0, 0.0], alpha=0.5)
        assert updated.weights[0] > 1 / 3
        assert updated.weights[1] == updated.weights[2]
        assert updated.weights[1] < 1 / 3

    def test_zero_weight_absorbed(self):
        w = WeightVector(weights=[0.5, 0.5, 0.0])
        for _ in range(20):
            w = exponentiated_update(w, [1.0, 0.0, -10.0], alpha=1.0)
        assert w.weights[2] == 0.0

    def test_simplex_preserved(self, rng):
        for _ in range(1000):
            w = WeightVector(weights=rng.dirichlet(np.ones(8)))
            updated = exponentiated_update(w, rng.normal(0, 50, 8), alpha=rng.uniform(0.01, 5.0))
            assert np.all(updated.weights >= 0)
            assert abs(updated.weights.sum() - 1.0) <= 1e-9

    def test_shift_invariance(self, rng):
        for _ in range(200):
            w = WeightVector(weights=rng.dirichlet(np.ones(5)))
            gradient = rng.normal(0, 1, 5)
            shifted = exponentiated_update(w, gradient + 3.7, alpha=0.5)
            plain = exponentiated_update(w, gradient, alpha=0.5)
            assert np.max(np.abs(shifted.weights - plain.weights)) <= 1e-12

    def test_no_overflow(self):
        updated = exponentiated_update(WeightVector.uniform(2), [-5000.0, 0.0], alpha=1.0)
        assert updated.weights.tolist() == pytest.approx([1.0, 0.0])

    def test_non_finite_gradient(self):
        with pytest.raises(ValueError):
            exponentiated_update(WeightVector.uniform(2), [np.nan, 0.0], alpha=1.0)


class TestPartitionStep(PartitionerTestBase):

    def test_symmetric_first_epoch(self, params):
        acc = MediaObjectAccumulators.initial(4, initial_bid=1.0)
        obs = EpochObservation(impressions=[1000] * 4, clicks=[2] * 4, spend=[1.0] * 4)
        weights, updated = partition_step(acc, obs, WeightVector.uniform(4), params, day=0,
                                          allocated=np.ones(4))
        assert weights.weights.tolist() == pytest.approx([0.25] * 4)
        assert updated.epochs_seen == 1
        assert updated.disc_clicks.tolist() == [2.0] * 4

    def test_better_media_object_gains(self):
        params = PartitionerParams(learning_rate=0.5, exploration_eta=1e-9,
                                   regularization_discount=1.0, discount_gamma=0.87)
        acc = MediaObjectAccumulators.initial(3, initial_bid=1.0)
        obs = EpochObservation(impressions=[1000] * 3, clicks=[5, 1, 1], spend=[1.0] * 3)
        weights, _ = partition_step(acc, obs, WeightVector.uniform(3), params, day=0,
                                    allocated=np.ones(3))
        assert weights.weights[0] > 1 / 3

    def test_simplex_over_random_steps(self, params, rng):
        acc = MediaObjectAccumulators.initial(10, initial_bid=1.0)
        w = WeightVector.uniform(10)
        for epoch in range(10000):
            budgets = 100.0 * w.weights
            impressions = rng.integers(0, 5000, 10).astype(float)
            obs = EpochObservation(impressions=impressions,
                                   clicks=rng.binomial(impressions.astype(int), 0.002),
                                   spend=budgets * rng.uniform(0, 1, 10))
            w, acc = partition_step(acc, obs, w, params, day=epoch // 24, allocated=budgets)
            assert np.all(w.weights >= 0)
            assert abs(w.weights.sum() - 1.0) <= 1e-9

    def test_dimension_mismatch(self, params):
        acc = MediaObjectAccumulators.initial(3, initial_bid=1.0)
        with pytest.raises(ValueError):
            partition_step(acc, EpochObservation.zeros(2), WeightVector.uniform(3), params, day=0)


class TestRegularizedFixedPoint(PartitionerTestBase):

    def test_distance_to_uniform_shrinks_without_quality(self, rng):
        size = 5
        uniform = np.full(size, 1.0 / size)
        for _ in range(20):
            w = WeightVector(weights=rng.dirichlet(np.ones(size)))
            distances = []
            for _ in range(50):
                distances.append(np.linalg.norm(w.weights - uniform))
                gradient = loss_gradient(np.zeros(size), w, lam=1.0, alpha=0.5)
                w = exponentiated_update(w, gradient, alpha=0.5)
            assert all(later <= earlier + 1e-15 for earlier, later in zip(distances, distances[1:]))

    def test_strong_regularization_stays_near_uniform(self, rng):
        size = 5
        qtilde = np.array([1.0, 0.5, 0.2, 0.0, 0.8])
        w = WeightVector(weights=rng.dirichlet(np.ones(size)))
        for _ in range(500):
            w = exponentiated_update(w, loss_gradient(qtilde, w, lam=20.0, alpha=0.05), alpha=0.05)
        assert np.max(np.abs(w.weights - 1.0 / size)) < 0.05
