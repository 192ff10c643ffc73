"""Iterated collect / improve / safety-test loop and the multi-run driver.

Every random stream of a run is derived from the run seed, so a run is fully
determined by (config, seed) and runs can execute in any order or process.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
import functools
import logging
from typing import Mapping

import numpy as np

from safeeval.bootstrap import hcope_lower_bound, LowerBoundReport, min_return_report
from safeeval.config import ExperimentConfig, GATE_ANY
from safeeval.datasource import (
    behavior_value_estimate,
    collect,
    make_behavior_policy,
    policy_fingerprint,
    split,
)
from safeeval.errors import NoOverlapError, SafeEvalError
from safeeval.estimators import default_factories, EstimatorFactory
from safeeval.improve import export_policy, improve, initial_state, ImproverState
from safeeval.models import Dataset, DiscretePolicy, EnvConfig, SplitSpec
from safeeval.mountain_car import rollout, trajectory_return
from safeeval.ope import (
    discounted_returns,
    estimate_behavior_policy,
    StateDiscretizer,
    tv_report,
)

logger = logging.getLogger(__name__)

# Stream tags under a run seed.
_BEHAVIOR, _DATA, _IMPROVE, _BOOTSTRAP, _ORACLE = range(5)


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit seed from a key path."""
    state = np.random.SeedSequence(list(keys)).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


@dataclass(frozen=True)
class EstimatorOutcome:
    """Result of one estimator in one iteration.

    ``report`` is None on failure, except that a no-overlap failure keeps a
    report bounded by the minimum observed return.
    """

    name: str
    report: LowerBoundReport | None
    failure: str | None = None


@dataclass(frozen=True)
class IterationRecord:
    """Everything measured in one loop iteration.

    Attributes:
        iteration: 1-based iteration index.
        data_seed: Seed of this iteration's collection.
        vb_hat: Mean return of the full collection.
        n_train: Trajectories used for improvement.
        n_test: Trajectories used for evaluation.
        outcomes: One entry per configured estimator.
        true_value: Monte Carlo value of the policy (diagnostic only).
        tv_distance: Mean total variation between estimated behavior and policy.
        tv_total: Summed total variation over the test states.
        passed: Whether the safety test passed.
        stopped: Whether the loop halted after this iteration.
    """

    iteration: int
    data_seed: int
    vb_hat: float
    n_train: int
    n_test: int
    outcomes: tuple[EstimatorOutcome, ...]
    true_value: float | None
    tv_distance: float
    tv_total: float
    passed: bool
    stopped: bool

    def outcome(self, name: str) -> EstimatorOutcome | None:
        """Outcome of the named estimator, if it was configured."""
        for item in self.outcomes:
            if item.name == name:
                return item
        return None


@dataclass(frozen=True)
class RunRecord:
    """One run of the loop."""

    run: int
    seed: int
    method: str
    estimators: tuple[str, ...]
    max_iterations: int
    behavior_policy_id: str
    iterations: tuple[IterationRecord, ...]
    first_pass_iteration: int | None

    @property
    def stopped(self) -> bool:
        """Whether the run halted on a passed safety test."""
        return bool(self.iterations) and self.iterations[-1].stopped


def true_value_oracle(
    policy: DiscretePolicy, env: EnvConfig, episodes: int, rng: np.random.Generator
) -> float:
    """Mean undiscounted return of ``policy`` run in the real environment.

    Diagnostic only: nothing in the loop reads this value.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = [trajectory_return(rollout(policy, env, rng)) for _ in range(episodes)]
    return float(np.mean(returns))


def safety_test(
    outcomes: tuple[EstimatorOutcome, ...], vb_hat: float, gate: str
) -> bool:
    """Whether the gating lower bound exceeds the behavior value estimate."""
    bounds = {
        item.name: item.report.lower_bound
        for item in outcomes
        if item.report is not None
    }
    if gate == GATE_ANY:
        return any(bound > vb_hat for bound in bounds.values())
    return gate in bounds and bounds[gate] > vb_hat


def _evaluate_estimators(
    cfg: ExperimentConfig,
    factories: Mapping[str, EstimatorFactory],
    pi_theta: DiscretePolicy,
    test_data: Dataset,
    seed: int,
    iteration: int,
) -> tuple[EstimatorOutcome, ...]:
    outcomes: list[EstimatorOutcome] = []
    for index, name in enumerate(cfg.estimators):
        bcfg = replace(
            cfg.bootstrap_for(name),
            seed=derive_seed(seed, _BOOTSTRAP, iteration, index),
        )
        try:
            estimator = factories[name](pi_theta, test_data)
            report = hcope_lower_bound(estimator, test_data, bcfg, name)
        except NoOverlapError as exc:
            returns = discounted_returns(test_data, cfg.improve.gamma)
            report = min_return_report(name, returns, bcfg)
            logger.warning(
                "iteration %d: %s has no overlap, bound set to the minimum return"
                " %.3f",
                iteration,
                name,
                report.lower_bound,
            )
            outcomes.append(EstimatorOutcome(name, report, str(exc)))
            continue
        except (SafeEvalError, ValueError) as exc:
            logger.warning("iteration %d: %s failed: %s", iteration, name, exc)
            outcomes.append(EstimatorOutcome(name, None, str(exc)))
            continue
        logger.info(
            "iteration %d: %s estimate %.3f, lower bound %.3f",
            iteration,
            name,
            report.point_estimate,
            report.lower_bound,
        )
        outcomes.append(EstimatorOutcome(name, report))
    return tuple(outcomes)


def run_safe_eval(
    cfg: ExperimentConfig,
    seed: int,
    estimator_factories: Mapping[str, EstimatorFactory] | None = None,
    run: int = 0,
) -> RunRecord:
    """Run the collect / improve / safety-test loop once.

    Args:
        cfg: Experiment settings.
        seed: Run seed; every stream of the run derives from it.
        estimator_factories: Builders of the bootstrapped statistics by name;
            defaults to the re-fitting pipelines.
        run: Run index, echoed in the record.

    Returns:
        The run's per-iteration record.
    """
    factories = estimator_factories or default_factories(
        cfg.estimators, cfg.estimator_settings
    )
    env = cfg.env
    improve_cfg = replace(cfg.improve, seed=derive_seed(seed, _IMPROVE))
    disc = StateDiscretizer(cfg.bins_per_dim)

    behavior = make_behavior_policy(
        np.random.default_rng(derive_seed(seed, _BEHAVIOR)),
        cfg.online_episodes,
        env,
    )
    behavior_id = policy_fingerprint(behavior)

    state: ImproverState | None = None
    iterations: list[IterationRecord] = []
    first_pass: int | None = None
    for i in range(1, cfg.max_iterations + 1):
        data_seed = derive_seed(seed, _DATA, i)
        data = collect(
            behavior,
            cfg.n_per_iteration,
            env,
            np.random.default_rng(data_seed),
            collection_time=i,
            source_seed=data_seed,
            behavior_policy_id=behavior_id,
        )
        train, test = split(data, SplitSpec(cfg.n_train, shuffle_seed=data_seed))
        vb_hat = behavior_value_estimate(data)

        if cfg.improve.reset_per_iteration:
            state = None
        if len(train):
            state, pi_theta = improve(train, improve_cfg, state)
        else:
            if state is None:
                state = initial_state(improve_cfg)
            pi_theta = export_policy(state, improve_cfg)

        outcomes = _evaluate_estimators(cfg, factories, pi_theta, test, seed, i)
        pib_hat = estimate_behavior_policy(test, disc, cfg.pib_alpha)
        tv = tv_report(pib_hat, pi_theta, test)

        true_value = None
        if cfg.oracle:
            true_value = true_value_oracle(
                pi_theta,
                env,
                cfg.oracle_episodes,
                np.random.default_rng(derive_seed(seed, _ORACLE, i)),
            )
            logger.info("iteration %d: true value %.3f (diagnostic)", i, true_value)

        passed = safety_test(outcomes, vb_hat, cfg.gate)
        if passed and first_pass is None:
            first_pass = i
        stopped = passed and not cfg.continue_after_pass
        logger.info(
            "run %d iteration %d: vb_hat %.3f, passed %s", run, i, vb_hat, passed
        )
        iterations.append(
            IterationRecord(
                iteration=i,
                data_seed=data_seed,
                vb_hat=vb_hat,
                n_train=len(train),
                n_test=len(test),
                outcomes=outcomes,
                true_value=true_value,
                tv_distance=tv.mean,
                tv_total=tv.total,
                passed=passed,
                stopped=stopped,
            )
        )
        if stopped:
            break

    return RunRecord(
        run=run,
        seed=seed,
        method=cfg.improve.method,
        estimators=cfg.estimators,
        max_iterations=cfg.max_iterations,
        behavior_policy_id=behavior_id,
        iterations=tuple(iterations),
        first_pass_iteration=first_pass,
    )


def _run_indexed(
    cfg: ExperimentConfig,
    factories: Mapping[str, EstimatorFactory] | None,
    run: int,
) -> RunRecord:
    return run_safe_eval(cfg, derive_seed(cfg.base_seed, run), factories, run)


def run_experiment(
    cfg: ExperimentConfig,
    estimator_factories: Mapping[str, EstimatorFactory] | None = None,
) -> list[RunRecord]:
    """All runs of every configured method, in (method, run) order.

    Run ``r`` uses the same seed for every method.
    """
    records: list[RunRecord] = []
    for method in cfg.method_list:
        method_cfg = replace(cfg, improve=replace(cfg.improve, method=method))
        task = functools.partial(_run_indexed, method_cfg, estimator_factories)
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                records.extend(pool.map(task, range(cfg.runs)))
        else:
            records.extend(task(run) for run in range(cfg.runs))
        logger.info("%s: finished %d runs", method, cfg.runs)
    return records
