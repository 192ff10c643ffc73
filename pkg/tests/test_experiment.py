"""Desk-scale experiment trends; deselected by default (run with -m slow)."""

from dataclasses import replace

import pytest

from safeeval.aggregator import aggregate, AggregateTable
from safeeval.config import apply_preset, ExperimentConfig
from safeeval.harness import run_experiment, RunRecord

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def desk_runs() -> dict[str, list[RunRecord]]:
    """Ten desk-scale runs per improvement method, sharing run seeds."""
    cfg = apply_preset(ExperimentConfig(), "desk")
    cfg = replace(
        cfg,
        methods=("ddqn", "bc", "bcq"),
        gate="mb",
        continue_after_pass=True,
        oracle=False,
        jobs=4,
    )
    records = run_experiment(cfg)
    runs: dict[str, list[RunRecord]] = {}
    for record in records:
        runs.setdefault(record.method, []).append(record)
    return runs


def _final(table: AggregateTable, key: str) -> float:
    value = table.series[key][-1].mean
    assert value is not None
    return value


class TestBoundTrends:
    """Lower bounds against the behavior value estimate."""

    def test_ddqn_detected_by_mb(self, desk_runs: dict[str, list[RunRecord]]) -> None:
        """MB certifies DDQN by iteration 6 in at least 70% of runs."""
        records = desk_runs["ddqn"]
        early = [
            r
            for r in records
            if r.first_pass_iteration is not None and r.first_pass_iteration <= 6
        ]
        assert len(early) >= 0.7 * len(records)

    def test_bc_never_beats_behavior(
        self, desk_runs: dict[str, list[RunRecord]]
    ) -> None:
        """No BC lower bound clears the behavior value by a standard error."""
        table = aggregate(desk_runs["bc"])
        for index, vb in enumerate(table.series["vb_hat"]):
            assert vb.mean is not None
            margin = vb.mean + (vb.se or 0.0)
            for name in table.estimators:
                point = table.series[f"{name}.lower_bound"][index]
                assert point.mean is None or point.mean <= margin, (name, index)

    def test_wis_below_mb_for_ddqn(
        self, desk_runs: dict[str, list[RunRecord]]
    ) -> None:
        """At the last iteration WIS bounds DDQN lower than MB does."""
        table = aggregate(desk_runs["ddqn"])
        assert _final(table, "wis.lower_bound") < _final(table, "mb.lower_bound")


class TestDistanceTrends:
    """Behavior-to-policy distance per method."""

    def test_bc_stays_closest(self, desk_runs: dict[str, list[RunRecord]]) -> None:
        """BC ends closer to the behavior policy than DDQN and BCQ."""
        tv = {
            method: _final(aggregate(records), "tv_distance")
            for method, records in desk_runs.items()
        }
        assert tv["bc"] < tv["ddqn"]
        assert tv["bc"] < tv["bcq"]
