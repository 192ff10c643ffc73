"""Shared fixtures: a small tabular MDP embedded in the MountainCar state box.

The MDP has three states, each placed in its own 32 x 32 discretizer cell, and
uses actions 0 and 2 only. Its exact finite-horizon value is computed by
dynamic programming, so estimators can be checked against ground truth.
"""

from dataclasses import dataclass

import numpy as np
import pytest

from safeeval.bootstrap import LowerBoundReport, summarize
from safeeval.harness import EstimatorOutcome, IterationRecord, RunRecord
from safeeval.models import (
    Dataset,
    DatasetMeta,
    EnvConfig,
    NUM_ACTIONS,
    State,
    Step,
    Trajectory,
)
from safeeval.ope import ModelValueFunctions, StateDiscretizer

DISC = StateDiscretizer(32)
TABULAR_STATES = (State(-1.0, 0.0), State(-0.5, 0.0), State(0.0, 0.0))
TABULAR_HORIZON = 20

# Action 1 is never taken by either policy.
BEHAVIOR_TABLE = np.array([[0.5, 0.0, 0.5], [0.7, 0.0, 0.3], [0.4, 0.0, 0.6]])
TARGET_TABLE = np.array([[0.2, 0.0, 0.8], [0.6, 0.0, 0.4], [0.3, 0.0, 0.7]])


@dataclass(frozen=True, eq=False)
class TablePolicy:
    """Policy given per tabular state; every other cell is uniform."""

    table: np.ndarray

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        """Action distribution for states of shape (N, 2)."""
        full = np.full((DISC.n_cells, NUM_ACTIONS), 1.0 / NUM_ACTIONS)
        full[TabularMDP.cells()] = self.table
        return full[DISC.cells(np.atleast_2d(states))]


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Three-state MDP; ``next_probs`` is conditional on not terminating."""

    initial: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray
    next_probs: np.ndarray
    horizon: int = TABULAR_HORIZON

    @staticmethod
    def cells() -> np.ndarray:
        """Discretizer cell of each tabular state."""
        return DISC.cells(np.array([s.as_array() for s in TABULAR_STATES]))

    def sample(self, table: np.ndarray, n: int, rng: np.random.Generator) -> Dataset:
        """Draw ``n`` trajectories following the per-state policy ``table``."""
        trajectories = []
        for _ in range(n):
            s = int(rng.choice(3, p=self.initial))
            steps: list[Step] = []
            terminated = False
            while len(steps) < self.horizon:
                a = int(rng.choice(NUM_ACTIONS, p=table[s]))
                steps.append(
                    Step(
                        TABULAR_STATES[s],
                        a,
                        float(self.rewards[s, a]),
                        float(table[s, a]),
                    )
                )
                if rng.random() < self.terminal[s, a]:
                    terminated = True
                    break
                s = int(rng.choice(3, p=self.next_probs[s, a]))
            trajectories.append(Trajectory(tuple(steps), terminated))
        return Dataset(
            tuple(trajectories),
            DatasetMeta(env_config=EnvConfig(max_macro_steps=self.horizon)),
        )

    def q_tables(self, table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact q[h, s, a] and v[h, s] by backward induction."""
        kernel = (1.0 - self.terminal)[..., None] * self.next_probs
        q = np.zeros((self.horizon, 3, NUM_ACTIONS))
        v = np.zeros((self.horizon + 1, 3))
        for h in range(self.horizon - 1, -1, -1):
            q[h] = self.rewards + kernel @ v[h + 1]
            v[h] = (table * q[h]).sum(axis=1)
        return q, v

    def value(self, table: np.ndarray) -> float:
        """Exact expected undiscounted return."""
        _, v = self.q_tables(table)
        return float(self.initial @ v[0])

    def value_functions(self, table: np.ndarray) -> ModelValueFunctions:
        """Exact value functions laid out on the discretizer cells."""
        q_small, v_small = self.q_tables(table)
        cells = self.cells()
        q = np.zeros((self.horizon, DISC.n_cells, NUM_ACTIONS))
        v = np.zeros((self.horizon + 1, DISC.n_cells))
        q[:, cells] = q_small
        v[:, cells] = v_small
        return ModelValueFunctions(disc=DISC, q=q, v=v)


def make_tabular_mdp() -> TabularMDP:
    """The fixed test MDP."""
    next_probs = np.zeros((3, NUM_ACTIONS, 3))
    next_probs[:, 1] = 1.0 / 3.0
    next_probs[0, 0] = [0.2, 0.5, 0.3]
    next_probs[0, 2] = [0.1, 0.3, 0.6]
    next_probs[1, 0] = [0.5, 0.2, 0.3]
    next_probs[1, 2] = [0.3, 0.3, 0.4]
    next_probs[2, 0] = [0.3, 0.4, 0.3]
    next_probs[2, 2] = [0.2, 0.2, 0.6]
    return TabularMDP(
        initial=np.array([0.6, 0.2, 0.2]),
        rewards=np.array([[-1.0, 0.0, -2.0], [0.0, 0.0, -1.0], [-3.0, 0.0, 0.5]]),
        terminal=np.array([[0.3, 1.0, 0.5], [0.4, 1.0, 0.3], [0.6, 1.0, 0.5]]),
        next_probs=next_probs,
    )


@pytest.fixture
def tabular_mdp() -> TabularMDP:
    """Tabular oracle MDP."""
    return make_tabular_mdp()


@pytest.fixture
def behavior_policy() -> TablePolicy:
    """Logging policy of the tabular MDP."""
    return TablePolicy(BEHAVIOR_TABLE)


@pytest.fixture
def target_policy() -> TablePolicy:
    """Policy under evaluation on the tabular MDP."""
    return TablePolicy(TARGET_TABLE)


def line_trajectory(rewards: list[float], terminated: bool = True) -> Trajectory:
    """Trajectory moving right along the position axis with given rewards."""
    steps = tuple(
        Step(State(-1.0 + 0.1 * t, 0.0), t % NUM_ACTIONS, r)
        for t, r in enumerate(rewards)
    )
    return Trajectory(steps, terminated)


@pytest.fixture
def small_dataset() -> Dataset:
    """Four short trajectories of uneven length."""
    return Dataset(
        (
            line_trajectory([-1.0, -1.0, 0.0]),
            line_trajectory([-1.0, 0.0]),
            line_trajectory([-1.0, -1.0, -1.0, -1.0], terminated=False),
            line_trajectory([0.0]),
        ),
        DatasetMeta(source_seed=7, behavior_policy_id="abc", collection_time=2),
    )


def scalar_dataset(values: np.ndarray | list[float]) -> Dataset:
    """One single-step trajectory per value; its return is the value."""
    return Dataset(
        tuple(Trajectory((Step(State(0.0, 0.0), 0, float(v)),), True) for v in values)
    )


def mean_reward(data: Dataset, rng: np.random.Generator) -> float:
    """Estimator returning the mean single-step reward."""
    return float(np.mean([t.steps[0].reward for t in data.trajectories]))


def bound_report(
    name: str, bound: float, estimate: float | None = None
) -> LowerBoundReport:
    """A percentile report with the given bound."""
    point = bound + 5.0 if estimate is None else estimate
    return LowerBoundReport(
        estimator=name,
        point_estimate=point,
        lower_bound=bound,
        method="percentile",
        delta=0.05,
        B=100,
        n=280,
        summary=summarize(np.array([bound, point])),
    )


def run_record(
    run: int,
    bounds: list[float | None],
    method: str = "ddqn",
    max_iterations: int = 3,
    vb_hat: float = -100.0,
    stop_on_pass: bool = True,
) -> RunRecord:
    """A run gated on "mb" with one MB bound per iteration; None marks a failure.

    True values are ``bound + 10`` and TV distances ``0.1 * iteration``.
    """
    iterations: list[IterationRecord] = []
    first_pass = None
    for i, bound in enumerate(bounds, start=1):
        if bound is None:
            outcome = EstimatorOutcome("mb", None, "diverged")
        else:
            outcome = EstimatorOutcome("mb", bound_report("mb", bound))
        passed = bound is not None and bound > vb_hat
        if passed and first_pass is None:
            first_pass = i
        iterations.append(
            IterationRecord(
                iteration=i,
                data_seed=1000 * run + i,
                vb_hat=vb_hat,
                n_train=20,
                n_test=280,
                outcomes=(outcome,),
                true_value=None if bound is None else bound + 10.0,
                tv_distance=0.1 * i,
                tv_total=28.0 * i,
                passed=passed,
                stopped=passed and stop_on_pass,
            )
        )
    return RunRecord(
        run=run,
        seed=run,
        method=method,
        estimators=("mb",),
        max_iterations=max_iterations,
        behavior_policy_id="feed",
        iterations=tuple(iterations),
        first_pass_iteration=first_pass,
    )
