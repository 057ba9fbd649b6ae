import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dragex.weighting import (
    Temperature,
    WeightError,
    WeighterNet,
    batch_ratios,
    check_weight_vector,
    nonparametric_weights,
    skewfit_weights,
    weight_entropy,
    weighter_objective,
    weighter_update,
)
from oracles import central_difference_gradient, maximize_entropic_weights, relative_gradient_error

finite_losses = st.lists(
    st.floats(min_value=-20, max_value=20, allow_nan=False), min_size=1, max_size=32
).map(np.array)


def tiny_weighter(seed=0, obs=4):
    torch.manual_seed(seed)
    return WeighterNet(obs_size=obs, channels=(3, 4, 8), dense=(16,))


def random_batch(n, obs=4, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand((n, 3, obs, obs), generator=g)


class TestNonparametricWeights:
    def test_equal_losses_give_uniform(self):
        np.testing.assert_allclose(nonparametric_weights([5.0, 5.0, 5.0], 0.3), [1, 1, 1])

    def test_hand_example_against_simplex_oracle(self):
        losses = np.array([0.0, math.log(2), math.log(4)])
        w = nonparametric_weights(losses, 1.0)
        np.testing.assert_allclose(w, [3 / 7, 6 / 7, 12 / 7], atol=1e-12)
        oracle = maximize_entropic_weights([losses], 1.0)[0]
        np.testing.assert_allclose(w, oracle, atol=1e-6)

    def test_huge_lambda_is_uniform(self):
        np.testing.assert_allclose(nonparametric_weights([0.0, 100.0], 1e12), [1, 1], atol=1e-6)

    def test_tiny_lambda_concentrates_on_argmax(self):
        w = nonparametric_weights([0.1, 0.9, 0.3, 0.2], 1e-3)
        np.testing.assert_allclose(w, [0, 4, 0, 0], atol=1e-9)

    def test_rejects_bad_inputs(self):
        with pytest.raises(WeightError):
            nonparametric_weights([1.0, np.nan], 1.0)
        with pytest.raises(WeightError):
            nonparametric_weights([1.0, np.inf], 1.0)
        with pytest.raises(WeightError):
            nonparametric_weights([1.0, 2.0], 0.0)
        with pytest.raises(WeightError):
            nonparametric_weights([1.0, 2.0], -1.0)
        with pytest.raises(WeightError):
            nonparametric_weights([], 1.0)

    @given(losses=finite_losses, lam=st.floats(min_value=0.05, max_value=50))
    @settings(max_examples=200, deadline=None)
    def test_validity_invariant(self, losses, lam):
        w = nonparametric_weights(losses, lam)
        assert np.all(w > 0)
        assert abs(w.mean() - 1.0) <= 1e-9

    @given(losses=finite_losses, lam=st.floats(min_value=0.05, max_value=50),
           shift=st.floats(min_value=-100, max_value=100))
    @settings(max_examples=100, deadline=None)
    def test_shift_invariance(self, losses, lam, shift):
        np.testing.assert_allclose(
            nonparametric_weights(losses, lam),
            nonparametric_weights(losses + shift, lam),
            rtol=1e-10, atol=1e-12,
        )


class TestSkewfitWeights:
    def test_constant_loglik_is_uniform(self):
        np.testing.assert_allclose(skewfit_weights([-1.0, -1.0], -1.0), [1, 1])

    def test_hand_example(self):
        # exp(0)=1 and exp(ln 2)=2 after alpha=-1 flips the signs: weights 2*[1,2]/3
        w = skewfit_weights([0.0, -math.log(2)], -1.0)
        np.testing.assert_allclose(w, [2 / 3, 4 / 3], atol=1e-12)
        oracle = maximize_entropic_weights([np.array([0.0, math.log(2)])], 1.0)[0]
        np.testing.assert_allclose(w, oracle, atol=1e-6)

    def test_rejects_nonnegative_alpha(self):
        with pytest.raises(WeightError):
            skewfit_weights([0.0, 1.0], 0.0)
        with pytest.raises(WeightError):
            skewfit_weights([0.0, 1.0], 0.5)

    @given(loglik=finite_losses, alpha=st.floats(min_value=-20, max_value=-0.05))
    @settings(max_examples=200, deadline=None)
    def test_matches_nonparametric_dual_formula(self, loglik, alpha):
        np.testing.assert_allclose(
            skewfit_weights(loglik, alpha),
            nonparametric_weights(-loglik, -1.0 / alpha),
            atol=1e-12,
        )

    def test_temperature_links_lambda_and_alpha(self):
        t = Temperature(lam=2.0)
        assert t.alpha == -0.5
        assert Temperature.from_alpha(-0.5).lam == 2.0
        with pytest.raises(WeightError):
            Temperature(lam=-1.0)
        with pytest.raises(WeightError):
            Temperature.from_alpha(0.1)


class TestBatchRatios:
    def test_equal_scores_give_unit_weights(self):
        torch.manual_seed(0)
        net = tiny_weighter()
        batch = random_batch(5).repeat(1, 1, 1, 1)
        batch = batch[:1].repeat(4, 1, 1, 1)  # identical observations
        np.testing.assert_allclose(batch_ratios(net, batch), np.ones(4), atol=1e-6)

    def test_matches_nonparametric_on_scores(self):
        # scores [0, ln 3] must weight as [0.5, 1.5]
        scores = torch.tensor([0.0, math.log(3.0)])
        from dragex.weighting import ratios_from_scores

        np.testing.assert_allclose(ratios_from_scores(scores).numpy(), [0.5, 1.5], atol=1e-6)
        np.testing.assert_allclose(
            nonparametric_weights(scores.numpy(), 1.0), [0.5, 1.5], atol=1e-12)

    def test_score_shift_invariance(self):
        from dragex.weighting import ratios_from_scores

        scores = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
        a = ratios_from_scores(scores)
        b = ratios_from_scores(scores + 17.5)
        assert torch.allclose(a, b, atol=1e-12)

    def test_permutation_equivariance(self):
        net = tiny_weighter(seed=3)
        batch = random_batch(6, seed=1)
        w = batch_ratios(net, batch)
        perm = np.array([4, 2, 0, 5, 1, 3])
        w_perm = batch_ratios(net, batch[perm])
        np.testing.assert_allclose(w_perm, w[perm], rtol=1e-5, atol=1e-7)

    def test_empty_batch_rejected(self):
        net = tiny_weighter()
        with pytest.raises(WeightError):
            batch_ratios(net, torch.zeros((0, 3, 4, 4)))

    def test_deterministic(self):
        net = tiny_weighter(seed=5)
        batch = random_batch(4, seed=2)
        np.testing.assert_array_equal(batch_ratios(net, batch), batch_ratios(net, batch))


class LinearScorer(torch.nn.Module):
    """Two-parameter scorer over scalar features, for gradient oracles."""

    def __init__(self, w=0.7, b=-0.2):
        super().__init__()
        self.w = torch.nn.Parameter(torch.tensor(w, dtype=torch.float64))
        self.b = torch.nn.Parameter(torch.tensor(b, dtype=torch.float64))

    def forward(self, x):
        return self.w * x.flatten(1).mean(dim=1) + self.b


class TestWeighterUpdate:
    def test_gradient_matches_finite_differences(self):
        batch = torch.linspace(-1, 1, 6, dtype=torch.float64).reshape(6, 1, 1, 1)
        neg_ll = torch.tensor([0.3, 1.2, -0.4, 0.9, 0.1, 2.0], dtype=torch.float64)
        lam = 0.7

        def objective_at(params):
            net = LinearScorer(w=params[0], b=params[1])
            with torch.no_grad():
                return float(weighter_objective(net, batch, neg_ll, lam))

        net = LinearScorer()
        obj = weighter_objective(net, batch, neg_ll, lam)
        obj.backward()
        analytic = np.array([net.w.grad.item(), net.b.grad.item()])
        numeric = central_difference_gradient(objective_at, np.array([0.7, -0.2]))
        assert relative_gradient_error(analytic, numeric) < 1e-4

    def test_uniform_weights_constant_payoff_zero_gradient(self):
        # all-equal scores give uniform ratios; with constant payoff the
        # entropic optimum is already reached, so the gradient vanishes
        batch = torch.ones((5, 1, 1, 1), dtype=torch.float64)
        neg_ll = torch.full((5,), 1.3, dtype=torch.float64)
        net = LinearScorer(w=0.0, b=0.4)
        obj = weighter_objective(net, batch, neg_ll, lam=0.5)
        obj.backward()
        assert abs(net.w.grad.item()) < 1e-12
        assert abs(net.b.grad.item()) < 1e-12

    def test_repeated_updates_increase_objective(self):
        torch.manual_seed(7)
        net = tiny_weighter(seed=7).double()
        batch = random_batch(8, seed=3).double()
        neg_ll = torch.randn(8, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
        opt = torch.optim.Adam(net.parameters(), lr=1e-4)
        trace = [weighter_update(net, batch, neg_ll, 1.0, opt) for _ in range(100)]
        assert trace[-1] >= trace[0]
        # no long decreasing stretches: Adam may dip locally but must trend up
        drops = sum(1 for a, b in zip(trace, trace[1:]) if b < a - 1e-9)
        assert drops < len(trace) // 2

    def test_batch_length_mismatch_rejected(self):
        net = tiny_weighter()
        with pytest.raises(WeightError):
            weighter_objective(net, random_batch(4), torch.zeros(3), 1.0)


class TestWeightVectorContract:
    def test_check_accepts_valid(self):
        check_weight_vector(np.array([0.5, 1.5]))

    def test_check_rejects_invalid(self):
        with pytest.raises(WeightError):
            check_weight_vector(np.array([0.0, 2.0]))
        with pytest.raises(WeightError):
            check_weight_vector(np.array([0.6, 1.5]))
        with pytest.raises(WeightError):
            check_weight_vector(np.array([np.nan, 1.0]))

    def test_entropy_range(self):
        assert weight_entropy(np.ones(8)) == pytest.approx(math.log(8))
        peaked = nonparametric_weights([0.0, 0.0, 50.0], 1.0)
        assert weight_entropy(peaked) < math.log(3)
