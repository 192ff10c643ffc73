"""Estimation pipelines used as bootstrapped statistics.

Each pipeline re-fits everything it estimates from the dataset it is handed:
the behavior policy, and for MB and WDR the model. Bootstrapping a pipeline
therefore carries the estimation error of those fits into the bound.
"""

from dataclasses import dataclass
import functools
import logging
from typing import Callable, Mapping

import numpy as np

from safeeval.bootstrap import Estimator
from safeeval.errors import ConfigError
from safeeval.models import Dataset, DiscretePolicy
from safeeval.ope import (
    build_model,
    compute_weights,
    estimate_behavior_policy,
    mb_estimate,
    model_value_functions,
    ModelValueFunctions,
    pdwis_estimate,
    StateDiscretizer,
    wdr_estimate,
    wis_estimate,
)

logger = logging.getLogger(__name__)

ESTIMATORS: tuple[str, ...] = ("wis", "pdwis", "mb", "wdr")

EstimatorFactory = Callable[[DiscretePolicy, Dataset], Estimator]


@dataclass(frozen=True)
class EstimatorSettings:
    """Knobs shared by the estimation pipelines.

    Attributes:
        gamma: Discount factor of the evaluated return.
        bins_per_dim: Discretizer resolution for the behavior estimate and model.
        alpha: Additive smoothing of the behavior estimate.
        mb_rollouts: Simulated trajectories per MB estimate.
        horizon: Model rollout and planning horizon.
        refit_model_per_resample: When false, WDR fits its model once on the
            full test data and reuses the value functions on every resample.
    """

    gamma: float = 1.0
    bins_per_dim: int = 32
    alpha: float = 1.0
    mb_rollouts: int = 10_000
    horizon: int = 250
    refit_model_per_resample: bool = True

    def __post_init__(self) -> None:
        if self.mb_rollouts < 1:
            raise ConfigError("mb_rollouts must be >= 1")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")

    @property
    def disc(self) -> StateDiscretizer:
        """Discretizer of the behavior estimate and the model."""
        return StateDiscretizer(self.bins_per_dim)


def wis_pipeline(
    pi_theta: DiscretePolicy,
    settings: EstimatorSettings,
    data: Dataset,
    rng: np.random.Generator,
) -> float:
    """WIS with the behavior policy estimated from ``data``."""
    pib_hat = estimate_behavior_policy(data, settings.disc, settings.alpha)
    weights = compute_weights(pi_theta, pib_hat, data)
    return wis_estimate(weights, data, settings.gamma)


def pdwis_pipeline(
    pi_theta: DiscretePolicy,
    settings: EstimatorSettings,
    data: Dataset,
    rng: np.random.Generator,
) -> float:
    """PDWIS with the behavior policy estimated from ``data``."""
    pib_hat = estimate_behavior_policy(data, settings.disc, settings.alpha)
    weights = compute_weights(pi_theta, pib_hat, data)
    return pdwis_estimate(weights, data, settings.gamma)


def mb_pipeline(
    pi_theta: DiscretePolicy,
    settings: EstimatorSettings,
    data: Dataset,
    rng: np.random.Generator,
) -> float:
    """Fit a model to ``data`` and simulate ``pi_theta`` in it."""
    model = build_model(data, settings.disc, settings.gamma, settings.horizon)
    return mb_estimate(model, pi_theta, settings.mb_rollouts, rng)


def fit_value_functions(
    pi_theta: DiscretePolicy, settings: EstimatorSettings, data: Dataset
) -> ModelValueFunctions:
    """Model-based q_hat and v_hat of ``pi_theta`` fitted to ``data``."""
    model = build_model(data, settings.disc, settings.gamma, settings.horizon)
    return model_value_functions(model, pi_theta)


def wdr_pipeline(
    pi_theta: DiscretePolicy,
    settings: EstimatorSettings,
    data: Dataset,
    rng: np.random.Generator,
    value_functions: ModelValueFunctions | None = None,
) -> float:
    """WDR; the model is fitted to ``data`` unless value functions are given."""
    pib_hat = estimate_behavior_policy(data, settings.disc, settings.alpha)
    weights = compute_weights(pi_theta, pib_hat, data)
    vf = value_functions
    if vf is None:
        vf = fit_value_functions(pi_theta, settings, data)
    return wdr_estimate(weights, data, vf, settings.gamma)


_PIPELINES = {
    "wis": wis_pipeline,
    "pdwis": pdwis_pipeline,
    "mb": mb_pipeline,
    "wdr": wdr_pipeline,
}


def make_estimator(
    name: str,
    pi_theta: DiscretePolicy,
    settings: EstimatorSettings | None = None,
    test: Dataset | None = None,
) -> Estimator:
    """Bind a pipeline to a policy, giving a statistic over (dataset, rng).

    Args:
        name: One of "wis", "pdwis", "mb", "wdr".
        pi_theta: Policy under evaluation.
        settings: Pipeline settings.
        test: Full test data; needed for WDR when the model is not re-fitted
            per resample.

    Raises:
        ConfigError: On an unknown name, or a fixed-model WDR without data.
    """
    settings = settings or EstimatorSettings()
    if name not in _PIPELINES:
        raise ConfigError(f"unknown estimator {name!r}")
    if name == "wdr" and not settings.refit_model_per_resample:
        if test is None:
            raise ConfigError("fixed-model WDR needs the test data")
        vf = fit_value_functions(pi_theta, settings, test)
        logger.debug("wdr: reusing one model across resamples")
        return functools.partial(wdr_pipeline, pi_theta, settings, value_functions=vf)
    return functools.partial(_PIPELINES[name], pi_theta, settings)


def default_factories(
    names: list[str] | tuple[str, ...], settings: EstimatorSettings
) -> Mapping[str, EstimatorFactory]:
    """One factory per estimator name, each building a fresh statistic."""
    return {name: functools.partial(_bind, name, settings) for name in names}


def _bind(
    name: str, settings: EstimatorSettings, pi_theta: DiscretePolicy, test: Dataset
) -> Estimator:
    return make_estimator(name, pi_theta, settings, test)
