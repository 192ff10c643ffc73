"""Tests for output formatters and writers."""

from dataclasses import replace
import json
from pathlib import Path
import tempfile

import numpy as np
import pytest

from conftest import bound_report, run_record
from safeeval.aggregator import RESULT_COLUMNS, result_rows
from safeeval.bootstrap import BootstrapConfig, min_return_report
from safeeval.config import ExperimentConfig
from safeeval.errors import ConfigError, DatasetError
from safeeval.formatters import (
    emit_outputs,
    format_as_json,
    format_as_text,
    format_results_csv,
    format_runs_json,
    format_runs_text,
    parse_results_csv,
    read_results_csv,
    write_results_csv,
    write_text,
)


def _records() -> list:
    return [
        run_record(0, [-50.0]),
        run_record(1, [None, -150.0, -120.5]),
    ]


class TestResultsCsv:
    """Test results.csv text."""

    def test_header(self) -> None:
        """The header lists the result columns in order."""
        text = format_results_csv([])
        assert text == ",".join(RESULT_COLUMNS) + "\n"

    def test_rows(self) -> None:
        """One line per row; blanks for failures, lowercase booleans."""
        lines = format_results_csv(result_rows(_records())).splitlines()
        assert len(lines) == 1 + 6
        first = dict(zip(RESULT_COLUMNS, lines[1].split(",")))
        assert first["method"] == "ddqn"
        assert first["estimator"] == "mb"
        assert first["lower_bound"] == "-50.0"
        assert first["stopped"] == "true"
        assert first["carried_forward"] == "false"
        failed = dict(zip(RESULT_COLUMNS, lines[4].split(",")))
        assert failed["run"] == "1"
        assert failed["lower_bound"] == ""
        assert failed["B"] == ""

    def test_deterministic(self) -> None:
        """Formatting the same rows twice gives identical bytes."""
        rows = result_rows(_records())
        assert format_results_csv(rows) == format_results_csv(rows)

    def test_parse_round_trip(self) -> None:
        """Written rows read back equal."""
        rows = result_rows(_records())
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_results_csv(rows, Path(tmpdir) / "out" / "results.csv")
            assert read_results_csv(path) == rows

    def test_exact_floats(self) -> None:
        """Floats survive the text form exactly."""
        rows = [replace(result_rows(_records())[0], tv_distance=0.1 + 0.2)]
        assert parse_results_csv(format_results_csv(rows))[0].tv_distance == 0.1 + 0.2

    def test_foreign_header(self) -> None:
        """Files with other columns are rejected."""
        with pytest.raises(DatasetError):
            parse_results_csv("a,b\n1,2\n")

    def test_malformed_value(self) -> None:
        """Unparseable cells are rejected."""
        text = format_results_csv(result_rows(_records())).replace(
            "ddqn,mb,percentile,0.05,100,20", "ddqn,mb,percentile,0.05,many,20", 1
        )
        with pytest.raises(DatasetError):
            parse_results_csv(text)

    def test_missing_file(self) -> None:
        """Unreadable files are dataset errors."""
        with tempfile.TemporaryDirectory() as tmpdir:
            with pytest.raises(DatasetError):
                read_results_csv(Path(tmpdir) / "results.csv")


class TestWriteText:
    """Test file writing."""

    def test_unwritable_location(self) -> None:
        """A file in place of the directory is a config error naming the path."""
        with tempfile.TemporaryDirectory() as tmpdir:
            blocker = Path(tmpdir) / "blocker"
            blocker.write_text("", encoding="utf-8")
            with pytest.raises(ConfigError, match="blocker"):
                write_text("x", blocker / "results.csv")


class TestFormatReports:
    """Test lower-bound report formatting."""

    def test_empty(self) -> None:
        """No reports, short message."""
        assert format_as_text([]) == "No estimates.\n"

    def test_text_with_verdict(self) -> None:
        """With a baseline each report shows pass or fail."""
        reports = [bound_report("wis", -90.0), bound_report("mb", -110.0)]
        text = format_as_text(reports, vb_hat=-100.0)
        assert "Behavior value estimate: -100.000" in text
        assert "WIS: estimate -85.000, 95% lower bound -90.000 [pass]" in text
        assert "MB: estimate -105.000, 95% lower bound -110.000 [fail]" in text
        assert "percentile, B=100, n=280" in text

    def test_text_without_verdict(self) -> None:
        """Without a baseline there is no verdict."""
        text = format_as_text([bound_report("wdr", -90.0)])
        assert "[" not in text

    def test_fallback_and_failures_noted(self) -> None:
        """BCa fallbacks and failed resamples are mentioned."""
        report = replace(bound_report("wis", -90.0), fallback=True, failures=3)
        text = format_as_text([report])
        assert "BCa fell back to percentile" in text
        assert "3 failed resamples" in text

    def test_minimum_return_fallback_noted(self) -> None:
        """A minimum-return bound is not described as a BCa fallback."""
        report = min_return_report(
            "wis", np.array([-50.0, -80.0]), BootstrapConfig(B=100)
        )
        text = format_as_text([report])
        assert "no overlap, bound is the minimum return" in text
        assert "BCa" not in text

    def test_json(self) -> None:
        """JSON output carries the baseline and bootstrap summary."""
        record = json.loads(format_as_json([bound_report("mb", -110.0)], -100.0))
        assert record["vb_hat"] == -100.0
        report = record["reports"][0]
        assert report["lower_bound"] == -110.0
        assert report["bootstrap"]["min"] == -110.0


class TestFormatRuns:
    """Test per-run summaries."""

    def test_text(self) -> None:
        """One line per run."""
        text = format_runs_text(_records())
        assert "ddqn run 0: 1 iterations, passed at iteration 1" in text
        assert "ddqn run 1: 3 iterations, never passed" in text
        assert format_runs_text([]) == "No runs.\n"

    def test_json_lists_failures(self) -> None:
        """Estimator failures are listed per run."""
        record = json.loads(format_runs_json(_records()))
        assert record[0]["stopped"] is True
        assert record[0]["failures"] == []
        assert record[1]["failures"] == [
            {"iteration": 1, "estimator": "mb", "failure": "diverged"}
        ]


class TestEmitOutputs:
    """Test the experiment output directory."""

    def test_files_written(self) -> None:
        """Results, config, summary and figures land in output_dir."""
        with tempfile.TemporaryDirectory() as tmpdir:
            cfg = ExperimentConfig(output_dir=str(Path(tmpdir) / "out"))
            paths = emit_outputs(_records(), cfg)
            names = sorted(p.name for p in paths)
            assert names == [
                "config.json",
                "figure2_ddqn.svg",
                "figure3.svg",
                "results.csv",
                "summary.json",
            ]
            config = json.loads((Path(tmpdir) / "out" / "config.json").read_text())
            assert config["output_dir"] == cfg.output_dir
            assert len(read_results_csv(Path(tmpdir) / "out" / "results.csv")) == 6

    def test_reproducible_bytes(self) -> None:
        """Writing the same records twice gives identical files."""
        with tempfile.TemporaryDirectory() as tmpdir:
            first = ExperimentConfig(output_dir=str(Path(tmpdir) / "a"))
            second = replace(first, output_dir=str(Path(tmpdir) / "b"))
            emit_outputs(_records(), first)
            emit_outputs(_records(), second)
            for name in ("results.csv", "summary.json", "figure3.svg"):
                a = (Path(tmpdir) / "a" / name).read_bytes()
                b = (Path(tmpdir) / "b" / name).read_bytes()
                assert a == b, name
