"""Off-policy point estimators and divergence diagnostics.

Every estimator consumes trajectories plus an estimated behavior policy; the
true logging policy is never read. Per-trajectory quantities are laid out on the
padded (n, T) grid of :attr:`Dataset.batch`; entries past a trajectory's end are
masked out, and its importance ratio is held at its final value there.
"""

from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np
from scipy import sparse

from safeeval.errors import NoOverlapError
from safeeval.models import (
    Dataset,
    DiscretePolicy,
    NUM_ACTIONS,
    POSITION_MAX,
    POSITION_MIN,
    VELOCITY_MAX,
    VELOCITY_MIN,
)


@dataclass(frozen=True)
class StateDiscretizer:
    """Uniform grid over the state box; every state maps to one cell."""

    bins_per_dim: int = 32
    low: tuple[float, float] = (POSITION_MIN, VELOCITY_MIN)
    high: tuple[float, float] = (POSITION_MAX, VELOCITY_MAX)

    def __post_init__(self) -> None:
        if self.bins_per_dim < 1:
            raise ValueError("bins_per_dim must be positive")

    @property
    def n_cells(self) -> int:
        """Number of cells."""
        return self.bins_per_dim**2

    def cells(self, states: np.ndarray) -> np.ndarray:
        """Cell index of each state; input shape (..., 2), output shape (...)."""
        states = np.asarray(states, dtype=np.float64)
        low = np.asarray(self.low)
        unit = (states - low) / (np.asarray(self.high) - low)
        coords = np.clip(
            np.floor(unit * self.bins_per_dim).astype(np.int64),
            0,
            self.bins_per_dim - 1,
        )
        return coords[..., 0] * self.bins_per_dim + coords[..., 1]

    def centers(self) -> np.ndarray:
        """Center state of every cell, shape (n_cells, 2), in cell-index order."""
        low = np.asarray(self.low)
        width = (np.asarray(self.high) - low) / self.bins_per_dim
        grid = np.arange(self.bins_per_dim)
        pos = low[0] + (grid + 0.5) * width[0]
        vel = low[1] + (grid + 0.5) * width[1]
        return np.stack(np.meshgrid(pos, vel, indexing="ij"), axis=-1).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class EstimatedBehaviorPolicy:
    """Count-based pi_hat_b(a|cell) = (count + alpha) / (total + 3 * alpha)."""

    disc: StateDiscretizer
    counts: np.ndarray
    alpha: float = 1.0

    @property
    def table(self) -> np.ndarray:
        """Smoothed probabilities per cell, shape (n_cells, 3)."""
        totals = self.counts.sum(axis=1, keepdims=True)
        return (self.counts + self.alpha) / (totals + NUM_ACTIONS * self.alpha)

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        """Action distribution for states of shape (N, 2)."""
        return self.table[self.disc.cells(np.atleast_2d(states))]


def estimate_behavior_policy(
    data: Dataset, disc: StateDiscretizer | None = None, alpha: float = 1.0
) -> EstimatedBehaviorPolicy:
    """Estimate the logging policy from visit counts with additive smoothing.

    Args:
        data: Nonempty dataset (the test part when used for evaluation).
        disc: State discretizer; defaults to 32 x 32 cells.
        alpha: Positive smoothing constant.

    Returns:
        Estimated behavior policy; unvisited cells are uniform.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    data.require_nonempty()
    disc = disc or StateDiscretizer()
    counts = np.zeros((disc.n_cells, NUM_ACTIONS))
    np.add.at(counts, (disc.cells(data.flat_states), data.flat_actions), 1.0)
    return EstimatedBehaviorPolicy(disc=disc, counts=counts, alpha=alpha)


def taken_action_probs(policy: DiscretePolicy, data: Dataset) -> np.ndarray:
    """Probability of each logged action on the padded grid, shape (n, T)."""
    batch = data.batch
    n, horizon = batch.actions.shape
    probs = policy.action_probs(batch.states.reshape(-1, 2)).reshape(n, horizon, -1)
    return np.take_along_axis(probs, batch.actions[..., None], axis=2)[..., 0]


class ImportanceWeights(NamedTuple):
    """Cumulative ratios rho (n, T) and per-decision normalized weights w (n, T)."""

    rho: np.ndarray
    w: np.ndarray


def compute_weights(
    pi_theta: DiscretePolicy, pib_hat: DiscretePolicy, data: Dataset
) -> ImportanceWeights:
    """Importance ratios of ``pi_theta`` against ``pib_hat`` over ``data``.

    Raises:
        ValueError: If ``pib_hat`` gives zero probability to a logged action.
    """
    mask = data.batch.mask
    target = taken_action_probs(pi_theta, data)
    behavior = taken_action_probs(pib_hat, data)
    if np.any(behavior[mask] <= 0.0):
        raise ValueError("behavior policy assigns zero probability to a logged action")
    ratio = np.where(mask, target / np.where(mask, behavior, 1.0), 1.0)
    rho = np.cumprod(ratio, axis=1)
    totals = rho.sum(axis=0)
    safe = np.where(totals > 0.0, totals, 1.0)
    w = np.where(totals > 0.0, rho / safe, 0.0)
    return ImportanceWeights(rho=rho, w=w)


def discounted_returns(data: Dataset, gamma: float = 1.0) -> np.ndarray:
    """Discounted return of every trajectory, shape (n,)."""
    rewards = data.batch.rewards
    return (rewards * gamma ** np.arange(rewards.shape[1])).sum(axis=1)


def _require_overlap(weights: ImportanceWeights) -> np.ndarray:
    final = weights.rho[:, -1]
    if not np.any(final > 0.0):
        raise NoOverlapError("no overlap: all final importance weights are zero")
    return final


def wis_estimate(
    weights: ImportanceWeights, data: Dataset, gamma: float = 1.0
) -> float:
    """Weighted importance sampling over whole-trajectory ratios.

    Raises:
        NoOverlapError: If every final ratio is zero.
    """
    final = _require_overlap(weights)
    returns = discounted_returns(data, gamma)
    return float(np.sum(final / final.sum() * returns))


def is_estimate(weights: ImportanceWeights, data: Dataset, gamma: float = 1.0) -> float:
    """Ordinary (unweighted) importance sampling; unbiased with the true pi_b."""
    return float(np.mean(weights.rho[:, -1] * discounted_returns(data, gamma)))


def pdis_estimate(
    weights: ImportanceWeights, data: Dataset, gamma: float = 1.0
) -> float:
    """Per-decision importance sampling without normalization."""
    rewards = data.batch.rewards
    discount = gamma ** np.arange(rewards.shape[1])
    n = rewards.shape[0]
    return float(np.sum(weights.rho * discount[None, :] * rewards) / n)


def pdwis_estimate(
    weights: ImportanceWeights, data: Dataset, gamma: float = 1.0
) -> float:
    """Per-decision weighted importance sampling.

    Raises:
        NoOverlapError: If every final ratio is zero.
    """
    _require_overlap(weights)
    rewards = data.batch.rewards
    discount = gamma ** np.arange(rewards.shape[1])
    return float(np.sum(weights.w * discount[None, :] * rewards))


@dataclass(frozen=True, eq=False)
class EstimatedModel:
    """Tabular model M_hat over discretizer cells plus one absorbing terminal.

    Attributes:
        disc: Discretizer defining the cells.
        kernel: Sparse P_hat with rows cell * 3 + action and columns
            0..n_cells (the last column is the terminal).
        rewards: R_hat, mean reward per (cell, action), shape (n_cells, 3).
        initial: d_hat_0, distribution over cells.
        visited: Whether a (cell, action) pair had observed transitions.
        gamma: Discount factor.
        horizon: Rollout and planning horizon.
    """

    disc: StateDiscretizer
    kernel: sparse.csr_matrix
    rewards: np.ndarray
    initial: np.ndarray
    visited: np.ndarray
    gamma: float
    horizon: int

    @property
    def terminal(self) -> int:
        """Column index of the absorbing terminal."""
        return self.disc.n_cells

    def sampling_keys(self) -> np.ndarray:
        """Row index plus within-row cumulative probability for every entry."""
        kernel = self.kernel
        row_ids = np.repeat(np.arange(kernel.shape[0]), np.diff(kernel.indptr))
        cumulative = np.empty_like(kernel.data)
        for start, end in zip(kernel.indptr[:-1], kernel.indptr[1:]):
            cumulative[start:end] = np.cumsum(kernel.data[start:end])
            cumulative[end - 1] = 1.0
        return row_ids + cumulative


def _transitions(
    data: Dataset, disc: StateDiscretizer
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flat (cell, action, reward) per step, and (row, next) for known transitions."""
    batch = data.batch
    cells = disc.cells(batch.states)
    mask = batch.mask
    n, horizon = cells.shape
    next_cells = np.full((n, horizon), -1, dtype=np.int64)
    next_cells[:, :-1] = np.where(mask[:, 1:], cells[:, 1:], -1)
    last = batch.lengths - 1
    next_cells[np.arange(n), last] = np.where(batch.terminated, disc.n_cells, -1)
    rows = cells * NUM_ACTIONS + batch.actions
    known = mask & (next_cells >= 0)
    return (
        cells[mask],
        batch.actions[mask],
        batch.rewards[mask],
        rows[known],
        next_cells[known],
    )


def build_model(
    data: Dataset,
    disc: StateDiscretizer | None = None,
    gamma: float = 1.0,
    horizon: int = 250,
) -> EstimatedModel:
    """Fit P_hat, R_hat and d_hat_0 from empirical counts.

    Pairs without observed transitions become a self-loop with reward -1, so
    unexplored regions never look better than staying put.
    """
    data.require_nonempty()
    disc = disc or StateDiscretizer()
    n_cells = disc.n_cells
    n_rows = n_cells * NUM_ACTIONS
    cells, actions, rewards, rows, nexts = _transitions(data, disc)

    reward_sum = np.zeros((n_cells, NUM_ACTIONS))
    reward_count = np.zeros((n_cells, NUM_ACTIONS))
    np.add.at(reward_sum, (cells, actions), rewards)
    np.add.at(reward_count, (cells, actions), 1.0)

    counts = sparse.coo_matrix(
        (np.ones(len(rows)), (rows, nexts)), shape=(n_rows, n_cells + 1)
    ).tocsr()
    row_totals = np.asarray(counts.sum(axis=1)).ravel()
    unvisited = np.flatnonzero(row_totals == 0)
    loops = sparse.coo_matrix(
        (np.ones(len(unvisited)), (unvisited, unvisited // NUM_ACTIONS)),
        shape=(n_rows, n_cells + 1),
    ).tocsr()
    counts = (counts + loops).tocsr()
    counts.sum_duplicates()
    counts.sort_indices()
    totals = np.asarray(counts.sum(axis=1)).ravel()
    kernel = sparse.csr_matrix(sparse.diags(1.0 / totals) @ counts)
    kernel.sort_indices()

    visited = (row_totals > 0).reshape(n_cells, NUM_ACTIONS)
    mean_reward = np.where(
        reward_count > 0, reward_sum / np.maximum(reward_count, 1.0), -1.0
    )

    start_cells = disc.cells(data.batch.states[:, 0])
    initial = np.bincount(start_cells, minlength=n_cells).astype(np.float64)
    initial /= initial.sum()

    return EstimatedModel(
        disc=disc,
        kernel=kernel,
        rewards=mean_reward,
        initial=initial,
        visited=visited,
        gamma=gamma,
        horizon=horizon,
    )


def _sample_rows(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling from each row of ``probs``."""
    cumulative = np.cumsum(probs, axis=1)
    picks = (uniforms[:, None] >= cumulative).sum(axis=1)
    return np.minimum(picks, probs.shape[1] - 1)


def mb_estimate(
    model: EstimatedModel,
    pi_theta: DiscretePolicy,
    rollouts: int = 10_000,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean return of ``rollouts`` trajectories simulated in the model.

    The policy is queried at cell-center states.
    """
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    policy_table = pi_theta.action_probs(model.disc.centers())
    keys = model.sampling_keys()
    indptr = model.kernel.indptr
    columns = model.kernel.indices

    cumulative_start = np.cumsum(model.initial)
    cells = np.minimum(
        np.searchsorted(cumulative_start, rng.random(rollouts), side="right"),
        model.disc.n_cells - 1,
    )
    returns = np.zeros(rollouts)
    alive = np.arange(rollouts)
    for h in range(model.horizon):
        if alive.size == 0:
            break
        current = cells[alive]
        actions = _sample_rows(policy_table[current], rng.random(alive.size))
        returns[alive] += model.gamma**h * model.rewards[current, actions]
        rows = current * NUM_ACTIONS + actions
        pos = np.searchsorted(keys, rows + rng.random(alive.size), side="right")
        pos = np.clip(pos, indptr[rows], indptr[rows + 1] - 1)
        nexts = columns[pos]
        keep = nexts != model.terminal
        cells[alive] = np.where(keep, nexts, 0)
        alive = alive[keep]
    return float(returns.mean())


class ModelValueFunctions(NamedTuple):
    """Finite-horizon q_hat[h, cell, action] and v_hat[h, cell] under pi_theta."""

    disc: StateDiscretizer
    q: np.ndarray
    v: np.ndarray


def model_value_functions(
    model: EstimatedModel, pi_theta: DiscretePolicy
) -> ModelValueFunctions:
    """Backward dynamic programming in the model; v_hat at the horizon is 0."""
    n_cells = model.disc.n_cells
    policy_table = pi_theta.action_probs(model.disc.centers())
    q = np.zeros((model.horizon, n_cells, NUM_ACTIONS))
    v = np.zeros((model.horizon + 1, n_cells))
    for h in range(model.horizon - 1, -1, -1):
        v_next = np.append(v[h + 1], 0.0)
        q[h] = model.rewards + model.gamma * (model.kernel @ v_next).reshape(
            n_cells, NUM_ACTIONS
        )
        v[h] = (policy_table * q[h]).sum(axis=1)
    return ModelValueFunctions(disc=model.disc, q=q, v=v)


def zero_value_functions(
    disc: StateDiscretizer, horizon: int
) -> ModelValueFunctions:
    """Value functions identically zero (WDR then reduces to PDWIS)."""
    return ModelValueFunctions(
        disc=disc,
        q=np.zeros((horizon, disc.n_cells, NUM_ACTIONS)),
        v=np.zeros((horizon + 1, disc.n_cells)),
    )


def wdr_estimate(
    weights: ImportanceWeights,
    data: Dataset,
    vf: ModelValueFunctions,
    gamma: float = 1.0,
) -> float:
    """Weighted doubly-robust estimate: PDWIS minus the model control variate.

    The weight before the first step is 1/n for every trajectory.

    Raises:
        NoOverlapError: If every final ratio is zero.
    """
    base = pdwis_estimate(weights, data, gamma)
    batch = data.batch
    n, horizon = batch.actions.shape
    planning = vf.q.shape[0]
    steps = np.broadcast_to(np.arange(horizon), (n, horizon))
    inside = batch.mask & (steps < planning)
    clipped = np.minimum(steps, planning - 1)
    cells = vf.disc.cells(batch.states)
    q_hat = np.where(inside, vf.q[clipped, cells, batch.actions], 0.0)
    v_hat = np.where(inside, vf.v[clipped, cells], 0.0)
    w_prev = np.concatenate([np.full((n, 1), 1.0 / n), weights.w[:, :-1]], axis=1)
    discount = gamma ** np.arange(horizon)
    control = np.sum(discount[None, :] * (weights.w * q_hat - w_prev * v_hat))
    return float(base - control)


class TotalVariation(NamedTuple):
    """Mean and raw sum of per-state total variation distances."""

    mean: float
    total: float


def tv_distance(
    pib_hat: DiscretePolicy,
    pi_theta: DiscretePolicy,
    data: Dataset,
    reduce: Literal["mean", "sum"] = "mean",
) -> float:
    """Half-L1 distance between two policies, over every state visited in data.

    Examples:
        Identical policies give 0; disjoint deterministic policies give 1.
    """
    report = tv_report(pib_hat, pi_theta, data)
    return report.mean if reduce == "mean" else report.total


def tv_report(
    pib_hat: DiscretePolicy, pi_theta: DiscretePolicy, data: Dataset
) -> TotalVariation:
    """Both the mean and the raw sum of per-state distances."""
    data.require_nonempty()
    states = data.flat_states
    per_state = 0.5 * np.abs(
        pib_hat.action_probs(states) - pi_theta.action_probs(states)
    ).sum(axis=1)
    return TotalVariation(mean=float(per_state.mean()), total=float(per_state.sum()))
