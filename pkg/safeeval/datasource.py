"""Simulated source of logged data.

A partially trained online learner plays the role of the unknown logging
policy. The framework only ever sees the trajectories it produces: collected
steps never carry behavior probabilities.
"""

import hashlib
import logging

import numpy as np

from safeeval.errors import DatasetError
from safeeval.models import (
    Dataset,
    DatasetMeta,
    DiscretePolicy,
    EnvConfig,
    NUM_ACTIONS,
    SplitSpec,
)
from safeeval.mountain_car import env_reset, env_step, rollout, trajectory_return
from safeeval.tiles import GreedyPolicy, LinearQ, TileCoder

logger = logging.getLogger(__name__)

BEHAVIOR_UNIFORM_MIX = 0.3
ONLINE_EPSILON = 0.1


def make_behavior_policy(
    rng: np.random.Generator,
    online_episodes: int = 150,
    env: EnvConfig | None = None,
    coder: TileCoder | None = None,
    learning_rate: float | None = None,
    uniform_mix: float = BEHAVIOR_UNIFORM_MIX,
) -> GreedyPolicy:
    """Train a medium-quality logging policy online.

    Runs epsilon-greedy Q-learning over tile features for ``online_episodes``
    episodes, then exports the greedy policy over the learned Q values with
    ``uniform_mix`` of the probability mass spread uniformly. Ties go to the
    lowest action index, so an untrained learner pushes left with probability
    (1 - uniform_mix) + uniform_mix / 3.

    Args:
        rng: Random stream for start states and exploration.
        online_episodes: Number of online training episodes.
        env: Environment config.
        coder: Tile coder; defaults to 8 tilings of 8 x 8.
        learning_rate: Step size; defaults to 0.1 / num_tilings.
        uniform_mix: Random-action probability of the exported policy.

    Returns:
        The behavior policy.
    """
    env = env or EnvConfig()
    coder = coder or TileCoder()
    lr = learning_rate if learning_rate is not None else 0.1 / coder.num_tilings
    weights = np.zeros((NUM_ACTIONS, coder.feature_count))

    for episode in range(online_episodes):
        state = env_reset(rng, env)
        if state.position >= env.goal_position:
            continue
        active = coder.active(state.as_array()[None, :])[0]
        for _ in range(env.max_macro_steps):
            values = weights[:, active].sum(axis=1)
            if rng.random() < ONLINE_EPSILON:
                action = int(rng.integers(NUM_ACTIONS))
            else:
                action = int(np.argmax(values))
            next_state, reward, done = env_step(state, action, env)
            target = reward
            next_active = coder.active(next_state.as_array()[None, :])[0]
            if not done:
                target += float(weights[:, next_active].sum(axis=1).max())
            weights[action, active] += lr * (target - values[action])
            if done:
                break
            state, active = next_state, next_active
        logger.debug("online episode %d finished", episode)

    logger.info("trained behavior policy for %d online episodes", online_episodes)
    return GreedyPolicy(LinearQ(coder, weights), soften=uniform_mix)


def policy_fingerprint(policy: GreedyPolicy) -> str:
    """Short stable identifier of a greedy policy's parameters."""
    digest = hashlib.sha256(np.ascontiguousarray(policy.q.weights).tobytes())
    digest.update(repr(policy.soften).encode())
    return digest.hexdigest()[:12]


def collect(
    policy: DiscretePolicy,
    n: int,
    env: EnvConfig,
    rng: np.random.Generator,
    collection_time: int = 0,
    source_seed: int | None = None,
    behavior_policy_id: str = "unknown",
) -> Dataset:
    """Collect ``n`` fresh trajectories; behavior probabilities are withheld.

    Each trajectory draws from its own stream derived from ``rng``, so the
    result does not depend on the order trajectories are generated in.
    """
    if n < 1:
        raise DatasetError("n must be a positive integer")
    seeds = rng.integers(0, 2**63 - 1, size=n)
    trajectories = tuple(
        rollout(policy, env, np.random.default_rng(int(seed)), record_probs=False)
        for seed in seeds
    )
    logger.debug("collected %d trajectories (collection %d)", n, collection_time)
    return Dataset(
        trajectories=trajectories,
        meta=DatasetMeta(
            source_seed=source_seed,
            behavior_policy_id=behavior_policy_id,
            collection_time=collection_time,
            env_config=env,
        ),
    )


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Shuffle and partition a dataset into (train, test).

    Raises:
        DatasetError: If ``spec.n_train`` exceeds the dataset size.
    """
    if spec.n_train > len(dataset):
        raise DatasetError(
            f"n_train {spec.n_train} exceeds dataset size {len(dataset)}"
        )
    order = np.random.default_rng(spec.shuffle_seed).permutation(len(dataset))
    return dataset.subset(order[: spec.n_train]), dataset.subset(order[spec.n_train :])


def behavior_value_estimate(dataset: Dataset) -> float:
    """Mean undiscounted return per trajectory.

    Raises:
        DatasetError: If the dataset is empty.
    """
    dataset.require_nonempty()
    return float(np.mean([trajectory_return(t, 1.0) for t in dataset.trajectories]))
