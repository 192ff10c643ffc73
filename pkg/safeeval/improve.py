"""Offline policy improvement: behavioral cloning, Double DQN and discrete BCQ.

All three learners work on the tile-coded linear models of :mod:`safeeval.tiles`
and read only the train part of each iteration's data. Learner state survives
across iterations unless the caller passes ``prior=None``.
"""

from dataclasses import dataclass, replace
import logging
from typing import Literal, NamedTuple

import numpy as np

from safeeval.errors import ConfigError
from safeeval.models import Dataset, DiscretePolicy
from safeeval.ope import (
    EstimatedBehaviorPolicy,
    estimate_behavior_policy,
    StateDiscretizer,
)
from safeeval.tiles import (
    allowed_actions,
    cross_entropy_grad,
    GreedyPolicy,
    linear_outputs,
    LinearQ,
    masked_argmax,
    SoftmaxPolicy,
    td_grad,
    TileCoder,
)

logger = logging.getLogger(__name__)

Method = Literal["bc", "ddqn", "bcq"]
METHODS: tuple[str, ...] = ("bc", "ddqn", "bcq")
DEFAULT_UPDATES = {"bc": 2_000, "ddqn": 10_000, "bcq": 10_000}


@dataclass(frozen=True)
class ImproveConfig:
    """Settings of an offline improvement method.

    Attributes:
        method: One of "bc", "ddqn", "bcq".
        updates_per_iteration: Gradient steps per call; None picks the method
            default (BC 2,000, DDQN/BCQ 10,000).
        learning_rate: Per-sample step size; None means 0.05 / num_tilings.
        gamma: Discount factor of the Q targets.
        target_sync_interval: Updates between target-network copies.
        bcq_threshold: Relative behavior-probability threshold tau.
        batch_size: Transitions per gradient step.
        seed: Seed of minibatch sampling.
        soften: Uniform mass of exported greedy policies.
        num_tilings: Tile coder tilings.
        tiles_per_dim: Tile coder resolution.
        filter_bins: Discretizer resolution of BCQ's behavior estimate.
        filter_alpha: Smoothing of BCQ's behavior estimate.
        reset_per_iteration: Start every iteration from fresh weights.
    """

    method: str = "ddqn"
    updates_per_iteration: int | None = None
    learning_rate: float | None = None
    gamma: float = 1.0
    target_sync_interval: int = 500
    bcq_threshold: float = 0.3
    batch_size: int = 32
    seed: int = 0
    soften: float = 0.05
    num_tilings: int = 8
    tiles_per_dim: int = 8
    filter_bins: int = 32
    filter_alpha: float = 1.0
    reset_per_iteration: bool = False

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown improvement method {self.method!r}")
        if self.updates_per_iteration is not None and self.updates_per_iteration < 0:
            raise ConfigError("updates_per_iteration must be nonnegative")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if self.target_sync_interval < 1 or self.batch_size < 1:
            raise ConfigError("target_sync_interval and batch_size must be positive")
        if not 0.0 <= self.bcq_threshold <= 1.0:
            raise ConfigError("bcq_threshold must be in [0, 1]")
        if not 0.0 <= self.soften < 1.0:
            raise ConfigError("soften must be in [0, 1)")

    @property
    def updates(self) -> int:
        """Effective number of updates per iteration."""
        if self.updates_per_iteration is not None:
            return self.updates_per_iteration
        return DEFAULT_UPDATES[self.method]

    @property
    def step_size(self) -> float:
        """Effective learning rate."""
        if self.learning_rate is not None:
            return self.learning_rate
        return 0.05 / self.num_tilings

    @property
    def coder(self) -> TileCoder:
        """Tile coder shared by every model of this method."""
        return TileCoder(self.num_tilings, self.tiles_per_dim)


@dataclass(frozen=True, eq=False)
class ImproverState:
    """Learner weights between updates.

    Attributes:
        method: Improvement method that owns the state.
        online: Q weights (DDQN/BCQ) or classifier logit weights (BC).
        target: Target-network weights, a past snapshot of ``online``; None
            for BC.
        update_counter: Number of updates applied so far.
    """

    method: str
    online: np.ndarray
    target: np.ndarray | None
    update_counter: int = 0


def initial_state(cfg: ImproveConfig) -> ImproverState:
    """Zero weights for the configured method."""
    weights = np.zeros((3, cfg.coder.feature_count))
    target = None if cfg.method == "bc" else weights.copy()
    return ImproverState(method=cfg.method, online=weights, target=target)


class StepBatch(NamedTuple):
    """Logged (state, action) pairs for behavioral cloning."""

    active: np.ndarray
    actions: np.ndarray


class Transitions(NamedTuple):
    """(s, a, r, s', done) tuples with precomputed tile features.

    ``next_states`` of terminal transitions repeat ``states``; their targets
    never read the next state.
    """

    active: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_active: np.ndarray
    next_states: np.ndarray
    done: np.ndarray

    def take(self, index: np.ndarray) -> "Transitions":
        """Rows at ``index``."""
        return Transitions(*(column[index] for column in self))


def step_batch(data: Dataset, coder: TileCoder) -> StepBatch:
    """Every logged step as a classification example."""
    return StepBatch(active=coder.active(data.flat_states), actions=data.flat_actions)


def transitions(data: Dataset, coder: TileCoder) -> Transitions:
    """Every transition with a known successor.

    The final step of a horizon-capped trajectory has no recorded successor and
    is left out.
    """
    states: list[np.ndarray] = []
    actions: list[np.ndarray] = []
    rewards: list[np.ndarray] = []
    next_states: list[np.ndarray] = []
    done: list[np.ndarray] = []
    for traj in data.trajectories:
        cols = traj.arrays
        length = len(traj)
        usable = length if traj.terminated else length - 1
        if usable <= 0:
            continue
        states.append(cols.states[:usable])
        actions.append(cols.actions[:usable])
        rewards.append(cols.rewards[:usable])
        successors = np.concatenate([cols.states[1:], cols.states[-1:]])
        next_states.append(successors[:usable])
        terminal = np.zeros(usable, dtype=bool)
        if traj.terminated:
            terminal[-1] = True
        done.append(terminal)
    if not states:
        empty = np.zeros((0, coder.num_tilings), dtype=np.int64)
        return Transitions(
            active=empty,
            actions=np.zeros(0, dtype=np.int64),
            rewards=np.zeros(0),
            next_active=empty,
            next_states=np.zeros((0, 2)),
            done=np.zeros(0, dtype=bool),
        )
    flat_states = np.concatenate(states)
    flat_next = np.concatenate(next_states)
    return Transitions(
        active=coder.active(flat_states),
        actions=np.concatenate(actions),
        rewards=np.concatenate(rewards),
        next_active=coder.active(flat_next),
        next_states=flat_next,
        done=np.concatenate(done),
    )


def bc_update(
    state: ImproverState, batch: StepBatch, cfg: ImproveConfig
) -> ImproverState:
    """One cross-entropy gradient step of the softmax action classifier.

    Rewards are never read.
    """
    if len(batch.actions) == 0:
        raise ValueError("batch must be nonempty")
    grad = cross_entropy_grad(state.online, batch.active, batch.actions)
    return replace(
        state,
        online=state.online - cfg.step_size * grad,
        update_counter=state.update_counter + 1,
    )


def double_q_targets(
    state: ImproverState,
    batch: Transitions,
    gamma: float,
    allowed: np.ndarray | None = None,
) -> np.ndarray:
    """y = r + gamma * Q_target(s', argmax_a' Q_online(s', a')), or r when done.

    ``allowed`` restricts the argmax to a per-transition action mask.
    """
    assert state.target is not None
    rows = np.arange(len(batch.actions))
    best = masked_argmax(linear_outputs(state.online, batch.next_active), allowed)
    bootstrap = linear_outputs(state.target, batch.next_active)[rows, best]
    return batch.rewards + gamma * np.where(batch.done, 0.0, bootstrap)


def _q_update(
    state: ImproverState,
    batch: Transitions,
    cfg: ImproveConfig,
    allowed: np.ndarray | None,
) -> ImproverState:
    targets = double_q_targets(state, batch, cfg.gamma, allowed)
    grad = td_grad(state.online, batch.active, batch.actions, targets)
    online = state.online - cfg.step_size * grad
    counter = state.update_counter + 1
    target = state.target
    if counter % cfg.target_sync_interval == 0:
        target = online.copy()
    return replace(state, online=online, target=target, update_counter=counter)


def ddqn_update(
    state: ImproverState, batch: Transitions, cfg: ImproveConfig
) -> ImproverState:
    """One Double DQN temporal-difference step."""
    return _q_update(state, batch, cfg, None)


def bcq_update(
    state: ImproverState,
    batch: Transitions,
    pib_hat: DiscretePolicy,
    cfg: ImproveConfig,
) -> ImproverState:
    """One discrete BCQ step: Double DQN with the argmax limited to likely actions."""
    allowed = allowed_actions(
        pib_hat.action_probs(batch.next_states), cfg.bcq_threshold
    )
    return _q_update(state, batch, cfg, allowed)


def export_policy(
    state: ImproverState,
    cfg: ImproveConfig,
    pib_hat: EstimatedBehaviorPolicy | None = None,
) -> DiscretePolicy:
    """Evaluation policy of a learner state.

    BC exports its softmax classifier; DDQN a softened greedy policy; BCQ a
    softened greedy policy whose argmax is limited by ``pib_hat``.
    """
    coder = cfg.coder
    if state.method == "bc":
        return SoftmaxPolicy(coder=coder, weights=state.online)
    q = LinearQ(coder=coder, weights=state.online)
    if state.method == "bcq":
        return GreedyPolicy(
            q=q,
            soften=cfg.soften,
            action_filter=pib_hat,
            filter_threshold=cfg.bcq_threshold,
        )
    return GreedyPolicy(q=q, soften=cfg.soften)


def behavior_filter(train: Dataset, cfg: ImproveConfig) -> EstimatedBehaviorPolicy:
    """BCQ's count-based behavior estimate, fitted on train data only."""
    return estimate_behavior_policy(
        train, StateDiscretizer(cfg.filter_bins), cfg.filter_alpha
    )


def improve(
    train: Dataset, cfg: ImproveConfig, prior: ImproverState | None = None
) -> tuple[ImproverState, DiscretePolicy]:
    """Run ``cfg.updates`` minibatch updates on ``train``.

    Minibatches come from a stream seeded by (seed, update_counter), so a run
    continued across calls is reproducible.

    Args:
        train: Nonempty train dataset.
        cfg: Improvement settings.
        prior: State to continue from; None starts from zero weights.

    Returns:
        Tuple of (new state, exported evaluation policy).
    """
    train.require_nonempty()
    state = prior if prior is not None else initial_state(cfg)
    if state.method != cfg.method:
        raise ConfigError(f"prior state is {state.method}, config is {cfg.method}")
    pib_hat = behavior_filter(train, cfg) if cfg.method == "bcq" else None
    coder = cfg.coder
    updates = cfg.updates
    if updates == 0:
        return state, export_policy(state, cfg, pib_hat)

    rng = np.random.default_rng([cfg.seed, state.update_counter])
    if cfg.method == "bc":
        examples = step_batch(train, coder)
        picks = rng.integers(0, len(examples.actions), size=(updates, cfg.batch_size))
        for index in picks:
            batch = StepBatch(examples.active[index], examples.actions[index])
            state = bc_update(state, batch, cfg)
    else:
        table = transitions(train, coder)
        if len(table.actions) == 0:
            logger.warning("no usable transitions in train data; skipping updates")
            return state, export_policy(state, cfg, pib_hat)
        allowed = None
        if pib_hat is not None:
            allowed = allowed_actions(
                pib_hat.action_probs(table.next_states), cfg.bcq_threshold
            )
        picks = rng.integers(0, len(table.actions), size=(updates, cfg.batch_size))
        for index in picks:
            mask = None if allowed is None else allowed[index]
            state = _q_update(state, table.take(index), cfg, mask)

    logger.info(
        "%s: %d updates (total %d)", cfg.method, updates, state.update_counter
    )
    return state, export_policy(state, cfg, pib_hat)
