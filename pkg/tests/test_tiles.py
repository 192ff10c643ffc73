"""Tests for tile coding and linear models."""

from typing import Callable

import numpy as np
import pytest

from safeeval.models import State
from safeeval.tiles import (
    allowed_actions,
    cross_entropy_grad,
    cross_entropy_loss,
    features,
    greedy_policy,
    GreedyPolicy,
    LinearQ,
    masked_argmax,
    mixed_softmax,
    policy_probs,
    q_values,
    SoftmaxPolicy,
    td_grad,
    td_loss,
    TileCoder,
)


def _numeric_grad(
    loss: Callable[[np.ndarray], float], weights: np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    grad = np.zeros_like(weights)
    for index in np.ndindex(weights.shape):
        up = weights.copy()
        down = weights.copy()
        up[index] += eps
        down[index] -= eps
        grad[index] = (loss(up) - loss(down)) / (2 * eps)
    return grad


class TestTileCoder:
    """Test the sparse feature map."""

    def test_one_tile_per_tiling(self) -> None:
        """Each tiling contributes exactly one feature in its own range."""
        coder = TileCoder(num_tilings=4, tiles_per_dim=5)
        active = features(coder, State(-0.3, 0.01))
        assert active.shape == (4,)
        for tiling, index in enumerate(active):
            assert tiling * 25 <= index < (tiling + 1) * 25

    def test_feature_count(self) -> None:
        """Features number tilings times tiles squared."""
        assert TileCoder(8, 8).feature_count == 512

    def test_nearby_states_share_tiles(self) -> None:
        """Close states share most tiles; distant ones share none."""
        coder = TileCoder()
        a = set(features(coder, State(-0.5, 0.0)).tolist())
        b = set(features(coder, State(-0.499, 0.0)).tolist())
        c = set(features(coder, State(0.5, 0.06)).tolist())
        assert len(a & b) >= 6
        assert not a & c

    def test_box_corners_valid(self) -> None:
        """Corner states map to valid indices."""
        coder = TileCoder()
        corners = np.array([[-1.2, -0.07], [0.6, 0.07]])
        active = coder.active(corners)
        assert active.min() >= 0
        assert active.max() < coder.feature_count

    def test_rejects_empty_grid(self) -> None:
        """Zero tilings is invalid."""
        with pytest.raises(ValueError):
            TileCoder(num_tilings=0)


class TestLinearModels:
    """Test Q functions and policies over tile features."""

    def test_q_values_sum_active_weights(self) -> None:
        """Q(s, a) is the sum of the action's weights over active tiles."""
        coder = TileCoder(2, 3)
        q = LinearQ.zeros(coder)
        state = State(0.0, 0.0)
        active = features(coder, state)
        q.weights[1, active] = [0.5, 0.25]
        assert q_values(q, state).tolist() == [0.0, 0.75, 0.0]

    def test_softmax_policy_is_distribution(self) -> None:
        """Softmax policies give proper distributions."""
        coder = TileCoder()
        rng = np.random.default_rng(0)
        policy = SoftmaxPolicy(coder, rng.normal(size=(3, coder.feature_count)))
        probs = policy_probs(policy, State(-0.4, 0.02))
        assert probs.sum() == pytest.approx(1.0)
        assert np.all(probs > 0.0)

    def test_uniform_mix(self) -> None:
        """Mixing puts at least m / 3 on every action."""
        probs = mixed_softmax(np.array([[100.0, 0.0, 0.0]]), 0.1, 0.3)
        assert np.all(probs >= 0.1 - 1e-12)
        assert probs.sum() == pytest.approx(1.0)

    def test_policy_validation(self) -> None:
        """Temperature and mixing are range-checked."""
        coder = TileCoder(1, 1)
        weights = np.zeros((3, 1))
        with pytest.raises(ValueError):
            SoftmaxPolicy(coder, weights, temperature=0.0)
        with pytest.raises(ValueError):
            SoftmaxPolicy(coder, weights, uniform_mix=1.0)

    def test_greedy_policy_softening(self) -> None:
        """The argmax gets 1 - soften + soften / 3, the others soften / 3."""
        coder = TileCoder(1, 2)
        q = LinearQ.zeros(coder)
        q.weights[2] = 1.0
        probs = greedy_policy(q, soften=0.3).action_probs(np.array([[0.0, 0.0]]))
        assert probs[0] == pytest.approx([0.1, 0.1, 0.8])

    def test_greedy_ties_pick_lowest_index(self) -> None:
        """Ties break toward the lowest action index."""
        q = LinearQ.zeros(TileCoder(1, 1))
        probs = greedy_policy(q, soften=0.0).action_probs(np.array([[0.0, 0.0]]))
        assert probs[0].tolist() == [1.0, 0.0, 0.0]

    def test_filtered_greedy_skips_unlikely_actions(self) -> None:
        """An action filter removes actions below the relative threshold."""

        class Filter:
            def action_probs(self, states: np.ndarray) -> np.ndarray:
                return np.tile([0.6, 0.35, 0.05], (len(states), 1))

        q = LinearQ.zeros(TileCoder(1, 1))
        q.weights[2] = 5.0
        q.weights[1] = 1.0
        policy = GreedyPolicy(
            q, soften=0.0, action_filter=Filter(), filter_threshold=0.3
        )
        probs = policy.action_probs(np.array([[0.0, 0.0]]))
        assert probs[0].tolist() == [0.0, 1.0, 0.0]


class TestActionMask:
    """Test the relative-probability mask."""

    def test_modal_action_always_allowed(self) -> None:
        """The most likely action passes any threshold up to one."""
        mask = allowed_actions(np.array([[0.2, 0.5, 0.3]]), 1.0)
        assert mask.tolist() == [[False, True, False]]

    def test_zero_threshold_allows_everything(self) -> None:
        """Threshold zero keeps all actions."""
        mask = allowed_actions(np.array([[0.9, 0.05, 0.05]]), 0.0)
        assert mask.all()

    def test_masked_argmax(self) -> None:
        """Masked entries are never chosen."""
        values = np.array([[3.0, 2.0, 1.0]])
        mask = np.array([[False, True, True]])
        assert masked_argmax(values, mask).tolist() == [1]
        assert masked_argmax(values).tolist() == [0]


class TestGradients:
    """Finite-difference checks of the analytic gradients."""

    def test_cross_entropy_grad(self) -> None:
        """The classifier gradient matches central differences."""
        coder = TileCoder(2, 2)
        rng = np.random.default_rng(1)
        weights = rng.normal(size=(3, coder.feature_count))
        active = coder.active(rng.uniform([-1.2, -0.07], [0.6, 0.07], size=(5, 2)))
        actions = rng.integers(0, 3, size=5)
        numeric = _numeric_grad(
            lambda w: cross_entropy_loss(w, active, actions), weights
        )
        analytic = cross_entropy_grad(weights, active, actions)
        assert np.allclose(analytic, numeric, atol=1e-5)

    def test_td_grad(self) -> None:
        """The temporal-difference gradient matches central differences."""
        coder = TileCoder(2, 2)
        rng = np.random.default_rng(2)
        weights = rng.normal(size=(3, coder.feature_count))
        active = coder.active(rng.uniform([-1.2, -0.07], [0.6, 0.07], size=(6, 2)))
        actions = rng.integers(0, 3, size=6)
        targets = rng.normal(size=6)
        numeric = _numeric_grad(
            lambda w: td_loss(w, active, actions, targets), weights
        )
        analytic = td_grad(weights, active, actions, targets)
        assert np.allclose(analytic, numeric, atol=1e-5)

    def test_repeated_samples_accumulate(self) -> None:
        """Duplicate rows in a batch add their gradients."""
        weights = np.zeros((3, 1))
        active = np.zeros((2, 1), dtype=np.int64)
        actions = np.array([0, 0])
        grad = td_grad(weights, active, actions, np.array([1.0, 1.0]))
        assert grad[0, 0] == -2.0
