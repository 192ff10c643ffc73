"""Tile coding and linear function approximation over the MountainCar state box.

Features are sparse: every state activates exactly one tile per tiling, so a
linear model's output is the sum of ``num_tilings`` weights. Arrays of active
indices have shape (N, num_tilings).
"""

from dataclasses import dataclass

import numpy as np

from safeeval.models import (
    DiscretePolicy,
    NUM_ACTIONS,
    POSITION_MAX,
    POSITION_MIN,
    State,
    VELOCITY_MAX,
    VELOCITY_MIN,
)

# Tiling i is displaced by i * (1, 3) / num_tilings of a cell, modulo one cell.
_OFFSET_DIRECTION = np.array([1.0, 3.0])


@dataclass(frozen=True)
class TileCoder:
    """Grid tilings over the 2-D state box.

    Attributes:
        num_tilings: Number of displaced grids.
        tiles_per_dim: Cells per dimension in each grid.
        low: Lower corner of the state box (position, velocity).
        high: Upper corner of the state box.
    """

    num_tilings: int = 8
    tiles_per_dim: int = 8
    low: tuple[float, float] = (POSITION_MIN, VELOCITY_MIN)
    high: tuple[float, float] = (POSITION_MAX, VELOCITY_MAX)

    def __post_init__(self) -> None:
        if self.num_tilings < 1 or self.tiles_per_dim < 1:
            raise ValueError("num_tilings and tiles_per_dim must be positive")

    @property
    def feature_count(self) -> int:
        """Total number of features."""
        return self.num_tilings * self.tiles_per_dim**2

    @property
    def offsets(self) -> np.ndarray:
        """Per-tiling displacement in cell units, shape (num_tilings, 2)."""
        steps = np.arange(self.num_tilings)[:, None] * _OFFSET_DIRECTION[None, :]
        return np.mod(steps / self.num_tilings, 1.0)

    def active(self, states: np.ndarray) -> np.ndarray:
        """Active feature indices for states of shape (N, 2).

        States outside the box are clamped to its boundary.
        """
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        low = np.asarray(self.low)
        high = np.asarray(self.high)
        unit = np.clip((states - low) / (high - low), 0.0, 1.0)
        scaled = unit[:, None, :] * self.tiles_per_dim + self.offsets[None, :, :]
        coords = np.clip(np.floor(scaled).astype(np.int64), 0, self.tiles_per_dim - 1)
        tiling_base = np.arange(self.num_tilings) * self.tiles_per_dim**2
        return (
            tiling_base[None, :]
            + coords[:, :, 0] * self.tiles_per_dim
            + coords[:, :, 1]
        )


def features(coder: TileCoder, state: State) -> np.ndarray:
    """Active feature indices of a single state.

    Examples:
        >>> features(TileCoder(1, 2), State(-0.3, 0.0)).tolist()
        [3]
    """
    return coder.active(state.as_array()[None, :])[0]


def linear_outputs(weights: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Sum of per-action weights over active features, shape (N, num_actions)."""
    return weights[:, active].sum(axis=2).T


@dataclass(frozen=True, eq=False)
class LinearQ:
    """Linear action-value function Q(s, a) = sum of weights[a] over features."""

    coder: TileCoder
    weights: np.ndarray

    @classmethod
    def zeros(cls, coder: TileCoder) -> "LinearQ":
        """Create a zero-initialized Q function."""
        return cls(coder, np.zeros((NUM_ACTIONS, coder.feature_count)))

    def values(self, states: np.ndarray) -> np.ndarray:
        """Q-values for states of shape (N, 2), shape (N, 3)."""
        return linear_outputs(self.weights, self.coder.active(states))


def q_values(q: LinearQ, state: State) -> np.ndarray:
    """Q-values of the three actions at one state."""
    return q.values(state.as_array()[None, :])[0]


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    exp = np.exp(scaled)
    return exp / exp.sum(axis=-1, keepdims=True)


def mixed_softmax(
    logits: np.ndarray, temperature: float = 1.0, uniform_mix: float = 0.0
) -> np.ndarray:
    """(1 - m) * softmax(logits / T) + m / num_actions.

    Examples:
        >>> mixed_softmax(np.array([[np.log(2.0), 0.0, 0.0]]))[0].round(6).tolist()
        [0.5, 0.25, 0.25]
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    probs = softmax(logits, temperature)
    if uniform_mix:
        probs = (1.0 - uniform_mix) * probs + uniform_mix / probs.shape[-1]
    return probs


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Stochastic policy pi(a|s) from linear logits.

    Attributes:
        coder: Feature coder.
        weights: Logit weights, shape (3, feature_count).
        temperature: Softmax temperature.
        uniform_mix: Probability mass spread uniformly over actions.
    """

    coder: TileCoder
    weights: np.ndarray
    temperature: float = 1.0
    uniform_mix: float = 0.0

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.uniform_mix < 1.0:
            raise ValueError("uniform_mix must be in [0, 1)")

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        """Action distribution for states of shape (N, 2)."""
        logits = linear_outputs(self.weights, self.coder.active(states))
        return mixed_softmax(logits, self.temperature, self.uniform_mix)


def policy_probs(policy: SoftmaxPolicy, state: State) -> np.ndarray:
    """Action distribution of a softmax policy at one state."""
    return policy.action_probs(state.as_array()[None, :])[0]


def allowed_actions(filter_probs: np.ndarray, threshold: float) -> np.ndarray:
    """Mask of actions whose probability relative to the modal one is >= threshold.

    Examples:
        >>> allowed_actions(np.array([[0.7, 0.25, 0.05]]), 0.3).tolist()
        [[True, True, False]]
    """
    relative = filter_probs / filter_probs.max(axis=-1, keepdims=True)
    mask = relative >= threshold
    assert mask.any(axis=-1).all(), "action mask is empty"
    return mask


def masked_argmax(values: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise argmax (lowest index wins ties), restricted to ``mask``."""
    if mask is not None:
        values = np.where(mask, values, -np.inf)
    return np.argmax(values, axis=-1)


@dataclass(frozen=True, eq=False)
class GreedyPolicy:
    """Softened greedy policy over a linear Q function.

    The argmax action gets (1 - soften) + soften / 3, the others soften / 3.
    With an ``action_filter``, the argmax only ranges over actions the filter
    policy deems likely enough (relative probability >= ``filter_threshold``).
    """

    q: LinearQ
    soften: float = 0.05
    action_filter: DiscretePolicy | None = None
    filter_threshold: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.soften < 1.0:
            raise ValueError("soften must be in [0, 1)")

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        """Action distribution for states of shape (N, 2)."""
        states = np.atleast_2d(states)
        values = self.q.values(states)
        mask = None
        if self.action_filter is not None:
            mask = allowed_actions(
                self.action_filter.action_probs(states), self.filter_threshold
            )
        best = masked_argmax(values, mask)
        probs = np.full(values.shape, self.soften / NUM_ACTIONS)
        probs[np.arange(len(best)), best] += 1.0 - self.soften
        return probs


def greedy_policy(q: LinearQ, soften: float = 0.05) -> GreedyPolicy:
    """Turn a learned Q function into an evaluable softened greedy policy."""
    return GreedyPolicy(q=q, soften=soften)


def cross_entropy_loss(
    weights: np.ndarray, active: np.ndarray, actions: np.ndarray
) -> float:
    """Summed negative log-likelihood of ``actions`` under softmax logits."""
    logits = linear_outputs(weights, active)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(actions)), actions]
    return float(np.sum(log_norm - picked))


def cross_entropy_grad(
    weights: np.ndarray, active: np.ndarray, actions: np.ndarray
) -> np.ndarray:
    """Gradient of :func:`cross_entropy_loss` with respect to ``weights``."""
    batch, tilings = active.shape
    probs = softmax(linear_outputs(weights, active))
    probs[np.arange(batch), actions] -= 1.0
    grad = np.zeros_like(weights)
    flat = active.ravel()
    for a in range(weights.shape[0]):
        np.add.at(grad[a], flat, np.repeat(probs[:, a], tilings))
    return grad


def td_loss(
    weights: np.ndarray, active: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> float:
    """Sum of 0.5 * (Q(s, a) - y)^2 for fixed targets y."""
    values = linear_outputs(weights, active)[np.arange(len(actions)), actions]
    return float(np.sum(0.5 * (values - targets) ** 2))


def td_grad(
    weights: np.ndarray, active: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """Gradient of :func:`td_loss` with respect to ``weights``."""
    batch, tilings = active.shape
    values = linear_outputs(weights, active)[np.arange(batch), actions]
    residual = values - targets
    grad = np.zeros_like(weights)
    np.add.at(
        grad,
        (np.repeat(actions, tilings), active.ravel()),
        np.repeat(residual, tilings),
    )
    return grad
