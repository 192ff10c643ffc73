"""Tests for the re-fitting estimation pipelines."""

from dataclasses import replace

import numpy as np
import pytest

from conftest import (
    BEHAVIOR_TABLE,
    DISC,
    make_tabular_mdp,
    TablePolicy,
    TABULAR_HORIZON,
    TARGET_TABLE,
)
from safeeval.bootstrap import resample
from safeeval.errors import ConfigError
from safeeval.estimators import (
    default_factories,
    ESTIMATORS,
    EstimatorSettings,
    fit_value_functions,
    make_estimator,
    mb_pipeline,
)
from safeeval.models import Dataset
from safeeval.ope import (
    compute_weights,
    estimate_behavior_policy,
    pdwis_estimate,
    wis_estimate,
)

SETTINGS = EstimatorSettings(mb_rollouts=500, horizon=TABULAR_HORIZON)


@pytest.fixture(scope="module")
def test_data() -> Dataset:
    """Held-out tabular trajectories."""
    return make_tabular_mdp().sample(BEHAVIOR_TABLE, 200, np.random.default_rng(0))


class TestEstimatorSettings:
    """Test pipeline settings."""

    def test_defaults(self) -> None:
        """Defaults: undiscounted, 32 bins, alpha 1, 10,000 rollouts."""
        settings = EstimatorSettings()
        assert settings.gamma == 1.0
        assert settings.disc == DISC
        assert settings.mb_rollouts == 10_000
        assert settings.refit_model_per_resample

    def test_validation(self) -> None:
        """Rollouts and smoothing must be positive."""
        with pytest.raises(ConfigError):
            EstimatorSettings(mb_rollouts=0)
        with pytest.raises(ConfigError):
            EstimatorSettings(alpha=0.0)


class TestMakeEstimator:
    """Test binding pipelines into bootstrappable statistics."""

    def test_wis_pipeline_fits_behavior_on_given_data(self, test_data: Dataset) -> None:
        """The WIS statistic equals WIS with pi_hat_b fitted on the same data."""
        pi = TablePolicy(TARGET_TABLE)
        estimator = make_estimator("wis", pi, SETTINGS)
        pib_hat = estimate_behavior_policy(test_data, DISC)
        expected = wis_estimate(compute_weights(pi, pib_hat, test_data), test_data)
        assert estimator(test_data, np.random.default_rng(0)) == expected

    def test_pdwis_pipeline(self, test_data: Dataset) -> None:
        """The PDWIS statistic uses the same behavior fit."""
        pi = TablePolicy(TARGET_TABLE)
        estimator = make_estimator("pdwis", pi, SETTINGS)
        pib_hat = estimate_behavior_policy(test_data, DISC)
        expected = pdwis_estimate(compute_weights(pi, pib_hat, test_data), test_data)
        assert estimator(test_data, np.random.default_rng(0)) == expected

    def test_refits_on_each_resample(self, test_data: Dataset) -> None:
        """On a resample the behavior estimate comes from the resample itself."""
        pi = TablePolicy(TARGET_TABLE)
        estimator = make_estimator("wis", pi, SETTINGS)
        sample = resample(test_data, np.random.default_rng(1))
        pib_hat = estimate_behavior_policy(sample, DISC)
        expected = wis_estimate(compute_weights(pi, pib_hat, sample), sample)
        assert estimator(sample, np.random.default_rng(0)) == expected

    def test_mb_uses_given_stream(self, test_data: Dataset) -> None:
        """MB rollouts draw from the random stream passed in."""
        pi = TablePolicy(TARGET_TABLE)
        estimator = make_estimator("mb", pi, SETTINGS)
        first = estimator(test_data, np.random.default_rng(3))
        second = mb_pipeline(pi, SETTINGS, test_data, np.random.default_rng(3))
        assert first == second

    def test_fixed_model_wdr_matches_refit_on_full_data(
        self, test_data: Dataset
    ) -> None:
        """On the data the model was fitted to both WDR variants agree."""
        pi = TablePolicy(TARGET_TABLE)
        fixed = make_estimator(
            "wdr", pi, replace(SETTINGS, refit_model_per_resample=False), test_data
        )
        refit = make_estimator("wdr", pi, SETTINGS)
        rng = np.random.default_rng(4)
        assert fixed(test_data, rng) == refit(test_data, rng)

    def test_fixed_model_wdr_keeps_value_functions(self, test_data: Dataset) -> None:
        """The fixed variant differs from re-fitting on a resample."""
        pi = TablePolicy(TARGET_TABLE)
        fixed = make_estimator(
            "wdr", pi, replace(SETTINGS, refit_model_per_resample=False), test_data
        )
        refit = make_estimator("wdr", pi, SETTINGS)
        sample = resample(test_data, np.random.default_rng(5))
        rng = np.random.default_rng(6)
        assert fixed(sample, rng) != refit(sample, rng)

    def test_fixed_model_wdr_needs_data(self) -> None:
        """Without test data there is nothing to fit the single model on."""
        settings = replace(SETTINGS, refit_model_per_resample=False)
        with pytest.raises(ConfigError):
            make_estimator("wdr", TablePolicy(TARGET_TABLE), settings)

    def test_unknown_name(self) -> None:
        """Unknown estimator names are config errors."""
        with pytest.raises(ConfigError):
            make_estimator("magic", TablePolicy(TARGET_TABLE))

    def test_value_functions_shape(self, test_data: Dataset) -> None:
        """Fitted value functions cover the horizon and every cell."""
        vf = fit_value_functions(TablePolicy(TARGET_TABLE), SETTINGS, test_data)
        assert vf.q.shape == (TABULAR_HORIZON, DISC.n_cells, 3)
        assert vf.v.shape == (TABULAR_HORIZON + 1, DISC.n_cells)


class TestDefaultFactories:
    """Test factory construction for the harness."""

    def test_one_factory_per_name(self, test_data: Dataset) -> None:
        """Every requested estimator gets a working factory."""
        factories = default_factories(ESTIMATORS, SETTINGS)
        assert list(factories) == list(ESTIMATORS)
        pi = TablePolicy(TARGET_TABLE)
        for name, factory in factories.items():
            value = factory(pi, test_data)(test_data, np.random.default_rng(0))
            assert np.isfinite(value), name
