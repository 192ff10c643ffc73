"""Data models for safeeval.

This module defines the MountainCar world's currency: states, steps,
trajectories and datasets of trajectories. All models are immutable (frozen
dataclasses); array views are computed lazily and cached on the instance.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
import math
from typing import NamedTuple, Protocol

import numpy as np

from safeeval.errors import ConfigError, DatasetError

POSITION_MIN = -1.2
POSITION_MAX = 0.6
VELOCITY_MIN = -0.07
VELOCITY_MAX = 0.07
NUM_ACTIONS = 3


class Action(IntEnum):
    """Discrete MountainCar actions."""

    PUSH_LEFT = 0
    NOOP = 1
    PUSH_RIGHT = 2


@dataclass(frozen=True)
class State:
    """Continuous MountainCar state.

    Attributes:
        position: Car position in [-1.2, 0.6].
        velocity: Car velocity in [-0.07, 0.07].
    """

    position: float
    velocity: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.position) and math.isfinite(self.velocity)):
            raise ValueError(f"non-finite state: {self!r}")
        if not POSITION_MIN <= self.position <= POSITION_MAX:
            raise ValueError(f"position {self.position} outside state box")
        if not VELOCITY_MIN <= self.velocity <= VELOCITY_MAX:
            raise ValueError(f"velocity {self.velocity} outside state box")

    def as_array(self) -> np.ndarray:
        """Return the state as a length-2 float array (position, velocity)."""
        return np.array([self.position, self.velocity], dtype=np.float64)


@dataclass(frozen=True)
class Step:
    """One macro-step of a trajectory.

    Attributes:
        state: State the action was taken in.
        action: Action index in {0, 1, 2}.
        reward: Reward received for the macro-step.
        behavior_prob: Probability the logging policy gave the action, or None
            when the logging policy is unknown to the consumer.
    """

    state: State
    action: int
    reward: float
    behavior_prob: float | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.action < NUM_ACTIONS:
            raise ValueError(f"action {self.action} not in [0, {NUM_ACTIONS})")
        if self.behavior_prob is not None and not 0.0 < self.behavior_prob <= 1.0:
            raise ValueError(f"behavior_prob {self.behavior_prob} not in (0, 1]")


class TrajectoryArrays(NamedTuple):
    """Column view of a single trajectory."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior_probs: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """A state-action-reward history of length L >= 1.

    Attributes:
        steps: Ordered macro-steps.
        terminated: True if the goal was reached, False if the horizon cap hit.
    """

    steps: tuple[Step, ...]
    terminated: bool

    def __post_init__(self) -> None:
        if not self.steps:
            raise DatasetError("trajectory must contain at least one step")

    def __len__(self) -> int:
        return len(self.steps)

    @cached_property
    def arrays(self) -> TrajectoryArrays:
        """Column arrays; missing behavior probabilities become NaN."""
        return TrajectoryArrays(
            states=np.array(
                [(s.state.position, s.state.velocity) for s in self.steps],
                dtype=np.float64,
            ),
            actions=np.array([s.action for s in self.steps], dtype=np.int64),
            rewards=np.array([s.reward for s in self.steps], dtype=np.float64),
            behavior_probs=np.array(
                [
                    np.nan if s.behavior_prob is None else s.behavior_prob
                    for s in self.steps
                ],
                dtype=np.float64,
            ),
        )


@dataclass(frozen=True)
class EnvConfig:
    """Modified MountainCar settings.

    Attributes:
        action_repeat: Inner dynamics ticks per macro-step.
        max_macro_steps: Horizon cap in macro-steps.
        goal_position: Position at which an episode terminates.
        start_position_range: Range of the uniform start position.
        start_velocity_range: Range of the uniform start velocity.
    """

    action_repeat: int = 4
    max_macro_steps: int = 250
    goal_position: float = 0.5
    start_position_range: tuple[float, float] = (POSITION_MIN, POSITION_MAX)
    start_velocity_range: tuple[float, float] = (VELOCITY_MIN, VELOCITY_MAX)

    def __post_init__(self) -> None:
        if self.action_repeat < 1:
            raise ConfigError("action_repeat must be >= 1")
        if self.max_macro_steps < 1:
            raise ConfigError("max_macro_steps must be >= 1")


class TrajectoryBatch(NamedTuple):
    """Padded arrays over a dataset; entries past a trajectory's end are masked.

    Shapes: states (n, T, 2); actions, rewards, mask (n, T); lengths and
    terminated (n,), where T is the longest trajectory length.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    terminated: np.ndarray


@dataclass(frozen=True)
class DatasetMeta:
    """Provenance of a dataset.

    Attributes:
        source_seed: Seed the collection stream was derived from.
        behavior_policy_id: Opaque identifier of the logging policy.
        collection_time: Logical collection counter (iteration index), unique
            per collection within a run.
        env_config: Environment the trajectories were generated in.
    """

    source_seed: int | None = None
    behavior_policy_id: str = "unknown"
    collection_time: int = 0
    env_config: EnvConfig = field(default_factory=EnvConfig)


@dataclass(frozen=True)
class Dataset:
    """A bag of trajectories with provenance metadata."""

    trajectories: tuple[Trajectory, ...]
    meta: DatasetMeta = field(default_factory=DatasetMeta)

    def __len__(self) -> int:
        return len(self.trajectories)

    def require_nonempty(self) -> None:
        """Raise DatasetError if the dataset holds no trajectories."""
        if not self.trajectories:
            raise DatasetError("dataset is empty")

    def subset(self, indices: np.ndarray | list[int]) -> "Dataset":
        """Return the dataset made of the given trajectory indices (repeats kept)."""
        return Dataset(
            trajectories=tuple(self.trajectories[int(i)] for i in indices),
            meta=self.meta,
        )

    @cached_property
    def batch(self) -> TrajectoryBatch:
        """Padded array view used by the vectorized estimators."""
        self.require_nonempty()
        n = len(self.trajectories)
        lengths = np.array([len(t) for t in self.trajectories], dtype=np.int64)
        horizon = int(lengths.max())
        states = np.zeros((n, horizon, 2), dtype=np.float64)
        actions = np.zeros((n, horizon), dtype=np.int64)
        rewards = np.zeros((n, horizon), dtype=np.float64)
        for i, traj in enumerate(self.trajectories):
            cols = traj.arrays
            length = lengths[i]
            states[i, :length] = cols.states
            # Padding repeats the final state so lookups past the end stay valid.
            states[i, length:] = cols.states[-1]
            actions[i, :length] = cols.actions
            rewards[i, :length] = cols.rewards
        mask = np.arange(horizon)[None, :] < lengths[:, None]
        terminated = np.array([t.terminated for t in self.trajectories], dtype=bool)
        return TrajectoryBatch(states, actions, rewards, mask, lengths, terminated)

    @cached_property
    def flat_states(self) -> np.ndarray:
        """All visited states, shape (total_steps, 2)."""
        self.require_nonempty()
        return np.concatenate([t.arrays.states for t in self.trajectories])

    @cached_property
    def flat_actions(self) -> np.ndarray:
        """All logged actions, aligned with flat_states."""
        self.require_nonempty()
        return np.concatenate([t.arrays.actions for t in self.trajectories])


@dataclass(frozen=True)
class SplitSpec:
    """How to split a dataset into train and test parts.

    Attributes:
        n_train: Number of trajectories assigned to the train part.
        shuffle_seed: Seed of the permutation applied before splitting.
    """

    n_train: int
    shuffle_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_train < 0:
            raise ConfigError("n_train must be nonnegative")


class DiscretePolicy(Protocol):
    """Anything yielding a full distribution over the 3 actions per state."""

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        """Return probabilities of shape (N, 3) for states of shape (N, 2)."""
        ...


def probs_at(policy: DiscretePolicy, state: State) -> np.ndarray:
    """Return the policy's action distribution at a single state."""
    return np.asarray(policy.action_probs(state.as_array()[None, :])[0])
