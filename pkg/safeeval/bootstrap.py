"""Bootstrap lower bounds on policy value.

The bootstrapped statistic is a whole estimation pipeline: given a dataset and
a random stream it returns a point estimate. Resampling is done over
trajectories, and resample ``b`` always draws from the stream
``default_rng([seed, b + 1])`` so results do not depend on evaluation order.
"""

from dataclasses import dataclass
import logging
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import norm

from safeeval.errors import ConfigError, EstimatorUnstableError, SafeEvalError
from safeeval.models import Dataset

logger = logging.getLogger(__name__)

Estimator = Callable[[Dataset, np.random.Generator], float]
BOUND_METHODS: tuple[str, ...] = ("percentile", "bca")
MIN_RETURN_METHOD = "min-return"


@dataclass(frozen=True)
class BootstrapConfig:
    """Bootstrap settings.

    Attributes:
        B: Number of resamples.
        delta: The bound holds with approximate probability 1 - delta.
        method: "percentile" or "bca".
        seed: Root of the resample streams.
        max_failure_fraction: Largest tolerated share of failed resamples.
    """

    B: int = 2000
    delta: float = 0.05
    method: str = "percentile"
    seed: int = 0
    max_failure_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.B < 2:
            raise ConfigError("B must be >= 2")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must be in (0, 1)")
        if self.method not in BOUND_METHODS:
            raise ConfigError(f"unknown bootstrap method {self.method!r}")
        if not 0.0 <= self.max_failure_fraction < 1.0:
            raise ConfigError("max_failure_fraction must be in [0, 1)")


class BootstrapSummary(NamedTuple):
    """Location and spread of the bootstrap statistics."""

    mean: float
    sd: float
    q05: float
    q50: float
    q95: float
    min: float
    max: float


@dataclass(frozen=True)
class LowerBoundReport:
    """Outcome of one high-confidence evaluation.

    Attributes:
        estimator: Name of the estimator.
        point_estimate: Estimator value on the full dataset.
        lower_bound: Approximate 1 - delta lower bound.
        method: Bound method actually used ("percentile" after a BCa fallback,
            "min-return" for a no-overlap fallback).
        delta: Confidence parameter.
        B: Number of resamples requested.
        n: Number of trajectories in the evaluated dataset.
        summary: Summary of the successful bootstrap statistics.
        fallback: True if BCa fell back to the percentile bound, or if the
            bound is the minimum observed return.
        failures: Number of resamples on which the estimator failed.
    """

    estimator: str
    point_estimate: float
    lower_bound: float
    method: str
    delta: float
    B: int
    n: int
    summary: BootstrapSummary
    fallback: bool = False
    failures: int = 0


def min_return_report(
    name: str, returns: np.ndarray, cfg: BootstrapConfig
) -> LowerBoundReport:
    """Report whose bound is the smallest observed return.

    Used when an importance-sampling estimator has no overlap with the data.
    """
    values = _finite(returns)
    worst = float(values.min())
    return LowerBoundReport(
        estimator=name,
        point_estimate=worst,
        lower_bound=worst,
        method=MIN_RETURN_METHOD,
        delta=cfg.delta,
        B=cfg.B,
        n=int(values.size),
        summary=summarize(values),
        fallback=True,
    )


def resample(data: Dataset, rng: np.random.Generator) -> Dataset:
    """Draw ``len(data)`` trajectories with replacement."""
    data.require_nonempty()
    return data.subset(rng.integers(0, len(data), size=len(data)))


def _finite(stats: np.ndarray | list[float]) -> np.ndarray:
    values = np.asarray(stats, dtype=np.float64)
    if values.size == 0:
        raise ValueError("no bootstrap statistics")
    if not np.all(np.isfinite(values)):
        raise ValueError("bootstrap statistics must be finite")
    return values


def percentile_lower_bound(stats: np.ndarray | list[float], delta: float) -> float:
    """Empirical delta-quantile, linear interpolation between order statistics."""
    values = _finite(stats)
    return float(np.quantile(values, delta, method="linear"))


class BcaResult(NamedTuple):
    """A BCa bound and whether it fell back to the percentile bound."""

    lower_bound: float
    fallback: bool


def bca_bound(
    stats: np.ndarray | list[float],
    theta_hat: float,
    jackknife_stats: np.ndarray | list[float],
    delta: float,
) -> BcaResult:
    """Bias-corrected and accelerated lower bound, reporting fallbacks."""
    values = _finite(stats)
    if values.size < 2:
        raise ValueError("BCa needs at least two bootstrap statistics")
    z0 = norm.ppf(np.mean(values < theta_hat))
    if not np.isfinite(z0):
        return BcaResult(percentile_lower_bound(values, delta), True)

    jack = np.asarray(jackknife_stats, dtype=np.float64)
    jack = jack[np.isfinite(jack)]
    accel = 0.0
    if jack.size >= 2:
        spread = jack.mean() - jack
        denom = 6.0 * np.sum(spread**2) ** 1.5
        if denom > 0.0:
            accel = float(np.sum(spread**3) / denom)

    shifted = z0 + norm.ppf(delta)
    scale = 1.0 - accel * shifted
    if scale <= 0.0:
        # The adjusted level tends to 0 as the scale reaches 0.
        return BcaResult(float(values.min()), False)
    level = float(norm.cdf(z0 + shifted / scale))
    return BcaResult(float(np.quantile(values, level, method="linear")), False)


def bca_lower_bound(
    stats: np.ndarray | list[float],
    theta_hat: float,
    jackknife_stats: np.ndarray | list[float],
    delta: float,
) -> float:
    """BCa lower bound; the percentile bound when the bias correction is infinite.

    Args:
        stats: Bootstrap statistics.
        theta_hat: Statistic on the original sample.
        jackknife_stats: Leave-one-out statistics over the sample.
        delta: Quantile level of the bound.

    Returns:
        The bootstrap quantile at Phi(z0 + (z0 + z_delta) / (1 - a (z0 + z_delta))).
    """
    return bca_bound(stats, theta_hat, jackknife_stats, delta).lower_bound


def summarize(stats: np.ndarray) -> BootstrapSummary:
    """Mean, standard deviation, quantiles and range of the statistics."""
    q05, q50, q95 = np.quantile(stats, [0.05, 0.5, 0.95])
    return BootstrapSummary(
        mean=float(stats.mean()),
        sd=float(stats.std(ddof=1)) if stats.size > 1 else 0.0,
        q05=float(q05),
        q50=float(q50),
        q95=float(q95),
        min=float(stats.min()),
        max=float(stats.max()),
    )


def _evaluate(estimator: Estimator, data: Dataset, rng: np.random.Generator) -> float:
    """Estimator value, or NaN on a recoverable failure."""
    try:
        value = float(estimator(data, rng))
    except (SafeEvalError, ValueError, FloatingPointError) as exc:
        logger.debug("estimator failed on a resample: %s", exc)
        return float("nan")
    return value if np.isfinite(value) else float("nan")


def jackknife(estimator: Estimator, data: Dataset, seed: int = 0) -> np.ndarray:
    """Leave-one-trajectory-out statistics; failures are NaN."""
    n = len(data)
    if n < 2:
        return np.zeros(0)
    everything = np.arange(n)
    return np.array(
        [
            _evaluate(
                estimator,
                data.subset(np.delete(everything, i)),
                np.random.default_rng([seed, 0, i]),
            )
            for i in range(n)
        ]
    )


def hcope_lower_bound(
    estimator: Estimator,
    test: Dataset,
    cfg: BootstrapConfig,
    name: str = "estimator",
) -> LowerBoundReport:
    """Bootstrap lower bound of ``estimator`` over ``test``.

    Raises:
        DatasetError: If ``test`` is empty.
        EstimatorUnstableError: If the estimator fails on more than
            ``cfg.max_failure_fraction`` of the resamples.
    """
    test.require_nonempty()
    theta_hat = float(estimator(test, np.random.default_rng([cfg.seed, 0])))

    stats = np.empty(cfg.B)
    for b in range(cfg.B):
        rng = np.random.default_rng([cfg.seed, b + 1])
        stats[b] = _evaluate(estimator, resample(test, rng), rng)
        if (b + 1) % 100 == 0:
            logger.debug("%s: %d/%d resamples", name, b + 1, cfg.B)

    ok = np.isfinite(stats)
    failures = int(cfg.B - ok.sum())
    if failures > cfg.max_failure_fraction * cfg.B or ok.sum() < 2:
        raise EstimatorUnstableError(
            f"estimator unstable: {name} failed on {failures} of {cfg.B} resamples"
        )
    if failures:
        logger.warning("%s failed on %d of %d resamples", name, failures, cfg.B)
    good = stats[ok]

    fallback = False
    method = cfg.method
    if cfg.method == "bca":
        jack = jackknife(estimator, test, cfg.seed)
        bound, fallback = bca_bound(good, theta_hat, jack, cfg.delta)
        if fallback:
            method = "percentile"
            logger.info("%s: BCa bias correction infinite, used percentile", name)
    else:
        bound = percentile_lower_bound(good, cfg.delta)

    return LowerBoundReport(
        estimator=name,
        point_estimate=theta_hat,
        lower_bound=bound,
        method=method,
        delta=cfg.delta,
        B=cfg.B,
        n=len(test),
        summary=summarize(good),
        fallback=fallback,
        failures=failures,
    )
