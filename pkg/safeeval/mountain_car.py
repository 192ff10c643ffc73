"""Modified MountainCar environment and return computation.

Each macro-step holds one action constant for ``action_repeat`` inner ticks of
the classic dynamics. The reward is -1 per macro-step, and 0 on the macro-step
that reaches the goal.
"""

import math

import numpy as np

from safeeval.errors import TerminalStateError
from safeeval.models import (
    DiscretePolicy,
    EnvConfig,
    NUM_ACTIONS,
    POSITION_MAX,
    POSITION_MIN,
    State,
    Step,
    Trajectory,
    VELOCITY_MAX,
    VELOCITY_MIN,
)


def _clip(value: float, low: float, high: float) -> float:
    return low if value < low else high if value > high else value


def inner_tick(position: float, velocity: float, action: int) -> tuple[float, float]:
    """Apply one tick of the classic MountainCar dynamics.

    Args:
        position: Current position.
        velocity: Current velocity.
        action: Action index in {0, 1, 2}.

    Returns:
        Tuple of (next_position, next_velocity).

    Examples:
        >>> inner_tick(-0.5, 0.0, 1)[1] == -0.0025 * math.cos(-1.5)
        True
    """
    velocity = _clip(
        velocity + 0.001 * (action - 1) - 0.0025 * math.cos(3 * position),
        VELOCITY_MIN,
        VELOCITY_MAX,
    )
    position = _clip(position + velocity, POSITION_MIN, POSITION_MAX)
    if position <= POSITION_MIN:
        velocity = 0.0
    return position, velocity


def env_reset(rng: np.random.Generator, cfg: EnvConfig | None = None) -> State:
    """Draw a random start state, uniform over position and velocity ranges.

    Args:
        rng: Random stream.
        cfg: Environment config; defaults to the full state box.

    Returns:
        Start state.
    """
    cfg = cfg or EnvConfig()
    low_p, high_p = cfg.start_position_range
    low_v, high_v = cfg.start_velocity_range
    position = float(rng.uniform(low_p, high_p))
    velocity = float(rng.uniform(low_v, high_v))
    return State(position, velocity)


def env_step(
    state: State, action: int, cfg: EnvConfig | None = None
) -> tuple[State, float, bool]:
    """Advance one macro-step.

    Args:
        state: Non-terminal current state.
        action: Action index held for ``cfg.action_repeat`` inner ticks.
        cfg: Environment config.

    Returns:
        Tuple of (next_state, reward, done).

    Raises:
        TerminalStateError: If ``state`` is already at or past the goal.

    Examples:
        >>> env_step(State(0.49, 0.07), 1)[1:]
        (0.0, True)
    """
    cfg = cfg or EnvConfig()
    if state.position >= cfg.goal_position:
        raise TerminalStateError(f"cannot step from terminal state {state}")
    if not 0 <= action < NUM_ACTIONS:
        raise ValueError(f"action {action} not in [0, {NUM_ACTIONS})")

    position, velocity = state.position, state.velocity
    for _ in range(cfg.action_repeat):
        position, velocity = inner_tick(position, velocity, int(action))
        if position >= cfg.goal_position:
            return State(position, velocity), 0.0, True
    return State(position, velocity), -1.0, False


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Sample an action index from a distribution by inverse CDF."""
    cumulative = np.cumsum(probs)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], "right"))
    return min(index, len(probs) - 1)


def rollout(
    policy: DiscretePolicy,
    cfg: EnvConfig,
    rng: np.random.Generator,
    record_probs: bool = False,
    start: State | None = None,
) -> Trajectory:
    """Generate one trajectory by sampling actions from ``policy``.

    A start state already at the goal yields a single zero-reward terminated
    step.

    Args:
        policy: Policy to follow.
        cfg: Environment config (horizon cap, action repeat).
        rng: Random stream for the start state and action sampling.
        record_probs: Store the policy's probability of each taken action.
        start: Optional fixed start state instead of ``env_reset``.

    Returns:
        Trajectory of at most ``cfg.max_macro_steps`` steps.
    """
    state = start if start is not None else env_reset(rng, cfg)
    steps: list[Step] = []
    terminated = False
    while len(steps) < cfg.max_macro_steps:
        probs = np.asarray(policy.action_probs(state.as_array()[None, :])[0])
        action = sample_action(probs, rng)
        prob = float(probs[action]) if record_probs else None
        if state.position >= cfg.goal_position:
            steps.append(Step(state, action, 0.0, prob))
            terminated = True
            break
        next_state, reward, done = env_step(state, action, cfg)
        steps.append(Step(state, action, reward, prob))
        state = next_state
        if done:
            terminated = True
            break
    return Trajectory(steps=tuple(steps), terminated=terminated)


def trajectory_return(traj: Trajectory, gamma: float = 1.0) -> float:
    """Discounted return sum_t gamma^t R_t of a trajectory.

    Examples:
        >>> from safeeval.models import Step, State
        >>> s = State(0.0, 0.0)
        >>> traj = Trajectory((Step(s, 0, -1.0), Step(s, 0, -1.0)), False)
        >>> trajectory_return(traj, 0.5)
        -1.5
    """
    rewards = traj.arrays.rewards
    if gamma == 1.0:
        return float(rewards.sum())
    return float(np.sum(rewards * gamma ** np.arange(len(rewards))))
