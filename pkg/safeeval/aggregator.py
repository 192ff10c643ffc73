"""Flatten run records into result rows and average them across runs."""

from collections import defaultdict
from dataclasses import dataclass, replace
import math
from typing import Iterable

import numpy as np

from safeeval.bootstrap import LowerBoundReport
from safeeval.errors import ConfigError
from safeeval.harness import IterationRecord, RunRecord

RESULT_COLUMNS: tuple[str, ...] = (
    "run",
    "iteration",
    "method",
    "estimator",
    "bound_method",
    "delta",
    "B",
    "n_train",
    "n_test",
    "point_estimate",
    "lower_bound",
    "vb_hat",
    "true_value",
    "tv_distance",
    "stopped",
    "carried_forward",
)


@dataclass(frozen=True)
class ResultRow:
    """One line of results.csv.

    ``estimator`` is empty when no estimator is configured; estimate fields are
    None when the estimator failed.
    """

    run: int
    iteration: int
    method: str
    estimator: str
    bound_method: str
    delta: float | None
    B: int | None
    n_train: int
    n_test: int
    point_estimate: float | None
    lower_bound: float | None
    vb_hat: float
    true_value: float | None
    tv_distance: float
    stopped: bool
    carried_forward: bool


def _row(
    record: RunRecord,
    item: IterationRecord,
    estimator: str,
    report: LowerBoundReport | None,
) -> ResultRow:
    return ResultRow(
        run=record.run,
        iteration=item.iteration,
        method=record.method,
        estimator=estimator,
        bound_method="" if report is None else report.method,
        delta=None if report is None else report.delta,
        B=None if report is None else report.B,
        n_train=item.n_train,
        n_test=item.n_test,
        point_estimate=None if report is None else report.point_estimate,
        lower_bound=None if report is None else report.lower_bound,
        vb_hat=item.vb_hat,
        true_value=item.true_value,
        tv_distance=item.tv_distance,
        stopped=item.stopped,
        carried_forward=False,
    )


def _iteration_rows(record: RunRecord, item: IterationRecord) -> list[ResultRow]:
    if not item.outcomes:
        return [_row(record, item, "", None)]
    return [_row(record, item, o.name, o.report) for o in item.outcomes]


def result_rows(records: Iterable[RunRecord]) -> list[ResultRow]:
    """Rows of every run, padded to ``max_iterations`` by carrying forward.

    A run that stopped early repeats its last iteration's rows, flagged
    ``carried_forward`` and not ``stopped``.
    """
    rows: list[ResultRow] = []
    for record in records:
        last: list[ResultRow] = []
        for item in record.iterations:
            last = _iteration_rows(record, item)
            rows.extend(last)
        done = len(record.iterations)
        for iteration in range(done + 1, record.max_iterations + 1):
            rows.extend(
                replace(row, iteration=iteration, stopped=False, carried_forward=True)
                for row in last
            )
    return rows


@dataclass(frozen=True)
class SeriesPoint:
    """Across-run statistics of one series at one iteration.

    ``se`` is None with fewer than two values; ``carried`` counts the values
    that were carried forward from an earlier iteration.
    """

    iteration: int
    mean: float | None
    se: float | None
    count: int
    carried: int


def mean_and_se(values: list[float]) -> tuple[float | None, float | None]:
    """Mean and standard error sd / sqrt(n); None where undefined.

    Examples:
        >>> mean_and_se([1.0, 3.0])
        (2.0, 1.0)
        >>> mean_and_se([5.0])
        (5.0, None)
    """
    if not values:
        return None, None
    array = np.asarray(values, dtype=np.float64)
    mean = float(array.mean())
    if array.size < 2:
        return mean, None
    return mean, float(array.std(ddof=1) / math.sqrt(array.size))


@dataclass(frozen=True)
class AggregateTable:
    """Per-iteration across-run means and standard errors of one method.

    Series keys are ``vb_hat``, ``true_value``, ``tv_distance`` and
    ``<estimator>.lower_bound`` / ``<estimator>.point_estimate``.
    """

    method: str
    runs: int
    iterations: tuple[int, ...]
    estimators: tuple[str, ...]
    series: dict[str, tuple[SeriesPoint, ...]]


def _check_shape(
    rows: list[ResultRow],
) -> tuple[str, tuple[int, ...], tuple[str, ...]]:
    methods = {row.method for row in rows}
    if len(methods) != 1:
        raise ConfigError(f"cannot aggregate mixed methods: {sorted(methods)}")
    per_run: dict[int, set[tuple[int, str]]] = defaultdict(set)
    for row in rows:
        per_run[row.run].add((row.iteration, row.estimator))
    shapes = {frozenset(cells) for cells in per_run.values()}
    if len(shapes) != 1:
        raise ConfigError("cannot aggregate runs with different configurations")
    cells = next(iter(shapes))
    iterations = tuple(sorted({i for i, _ in cells}))
    estimators = tuple(sorted({name for _, name in cells if name}))
    return methods.pop(), iterations, estimators


def aggregate_rows(
    rows: list[ResultRow], include_carried: bool = True
) -> AggregateTable:
    """Average rows of one method across runs, aligned by iteration.

    Raises:
        ConfigError: If rows mix methods or runs differ in shape.
    """
    if not rows:
        raise ConfigError("nothing to aggregate")
    method, iterations, estimators = _check_shape(rows)

    values: dict[tuple[str, int], list[float]] = defaultdict(list)
    carried: dict[tuple[str, int], int] = defaultdict(int)
    seen: set[tuple[int, int]] = set()

    def add(key: str, row: ResultRow, value: float | None) -> None:
        if value is None or (row.carried_forward and not include_carried):
            return
        values[(key, row.iteration)].append(value)
        if row.carried_forward:
            carried[(key, row.iteration)] += 1

    for row in rows:
        if (row.run, row.iteration) not in seen:
            seen.add((row.run, row.iteration))
            add("vb_hat", row, row.vb_hat)
            add("true_value", row, row.true_value)
            add("tv_distance", row, row.tv_distance)
        if row.estimator:
            add(f"{row.estimator}.lower_bound", row, row.lower_bound)
            add(f"{row.estimator}.point_estimate", row, row.point_estimate)

    keys = ["vb_hat", "true_value", "tv_distance"]
    for name in estimators:
        keys += [f"{name}.lower_bound", f"{name}.point_estimate"]
    series = {}
    for key in keys:
        points = []
        for iteration in iterations:
            cell = values.get((key, iteration), [])
            mean, se = mean_and_se(cell)
            points.append(
                SeriesPoint(iteration, mean, se, len(cell), carried[(key, iteration)])
            )
        series[key] = tuple(points)
    return AggregateTable(
        method=method,
        runs=len({row.run for row in rows}),
        iterations=iterations,
        estimators=estimators,
        series=series,
    )


def aggregate(records: list[RunRecord]) -> AggregateTable:
    """Across-run table of runs that share one configuration.

    Raises:
        ConfigError: If the records are empty or their configurations differ.
    """
    if not records:
        raise ConfigError("nothing to aggregate")
    shapes = {(r.method, r.estimators, r.max_iterations) for r in records}
    if len(shapes) != 1:
        raise ConfigError("cannot aggregate runs with different configurations")
    return aggregate_rows(result_rows(records))


def group_by_method(rows: list[ResultRow]) -> dict[str, list[ResultRow]]:
    """Rows split by improvement method, in first-seen order."""
    groups: dict[str, list[ResultRow]] = defaultdict(list)
    for row in rows:
        groups[row.method].append(row)
    return dict(groups)
