"""Output formatters and writers for safeeval results."""

import csv
import io
import json
from pathlib import Path
from typing import Any

from safeeval.aggregator import RESULT_COLUMNS, result_rows, ResultRow
from safeeval.bootstrap import LowerBoundReport, MIN_RETURN_METHOD
from safeeval.config import ExperimentConfig, format_config
from safeeval.errors import ConfigError, DatasetError
from safeeval.harness import RunRecord
from safeeval.plots import write_figures


def _cell(value: Any) -> str:
    """CSV text of one value; floats use repr so output is exact."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_results_csv(rows: list[ResultRow]) -> str:
    """results.csv text, header included."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for row in rows:
        writer.writerow([_cell(getattr(row, column)) for column in RESULT_COLUMNS])
    return buffer.getvalue()


def write_text(text: str, path: str | Path) -> Path:
    """Write a text file, creating its directory.

    Raises:
        ConfigError: If the location is not writable; the message names it.
    """
    out = Path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from exc
    return out


def write_results_csv(rows: list[ResultRow], path: str | Path) -> Path:
    """Write results.csv."""
    return write_text(format_results_csv(rows), path)


def _optional(text: str, kind: type) -> Any:
    if text == "":
        return None
    return kind(text)


def parse_results_csv(text: str) -> list[ResultRow]:
    """Rows of a results.csv text.

    Raises:
        DatasetError: On a foreign header or malformed values.
    """
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
        raise DatasetError("not a results.csv file: unexpected columns")
    rows: list[ResultRow] = []
    try:
        for record in reader:
            rows.append(
                ResultRow(
                    run=int(record["run"]),
                    iteration=int(record["iteration"]),
                    method=record["method"],
                    estimator=record["estimator"],
                    bound_method=record["bound_method"],
                    delta=_optional(record["delta"], float),
                    B=_optional(record["B"], int),
                    n_train=int(record["n_train"]),
                    n_test=int(record["n_test"]),
                    point_estimate=_optional(record["point_estimate"], float),
                    lower_bound=_optional(record["lower_bound"], float),
                    vb_hat=float(record["vb_hat"]),
                    true_value=_optional(record["true_value"], float),
                    tv_distance=float(record["tv_distance"]),
                    stopped=record["stopped"] == "true",
                    carried_forward=record["carried_forward"] == "true",
                )
            )
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"malformed results.csv row: {exc}") from exc
    return rows


def read_results_csv(path: str | Path) -> list[ResultRow]:
    """Read a results.csv written by :func:`write_results_csv`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot read results {path}: {exc}") from exc
    return parse_results_csv(text)


def _report_dict(report: LowerBoundReport) -> dict[str, Any]:
    return {
        "estimator": report.estimator,
        "point_estimate": report.point_estimate,
        "lower_bound": report.lower_bound,
        "method": report.method,
        "delta": report.delta,
        "B": report.B,
        "n": report.n,
        "fallback": report.fallback,
        "failures": report.failures,
        "bootstrap": report.summary._asdict(),
    }


def format_as_text(
    reports: list[LowerBoundReport], vb_hat: float | None = None
) -> str:
    """Human-readable lower-bound reports.

    Examples:
        >>> format_as_text([])
        'No estimates.\\n'
    """
    if not reports:
        return "No estimates.\n"
    lines: list[str] = []
    if vb_hat is not None:
        lines.append(f"Behavior value estimate: {vb_hat:.3f}")
    for report in reports:
        level = 1.0 - report.delta
        header = (
            f"{report.estimator.upper()}: estimate {report.point_estimate:.3f}, "
            f"{level:.0%} lower bound {report.lower_bound:.3f}"
        )
        if vb_hat is not None:
            verdict = "pass" if report.lower_bound > vb_hat else "fail"
            header += f" [{verdict}]"
        lines.append(header)
        detail = f"  {report.method}, B={report.B}, n={report.n}"
        if report.method == MIN_RETURN_METHOD:
            detail += ", no overlap, bound is the minimum return"
        elif report.fallback:
            detail += ", BCa fell back to percentile"
        if report.failures:
            detail += f", {report.failures} failed resamples"
        lines.append(detail)
    return "\n".join(lines) + "\n"


def format_as_json(
    reports: list[LowerBoundReport], vb_hat: float | None = None
) -> str:
    """Lower-bound reports as pretty-printed JSON."""
    result = {
        "vb_hat": vb_hat,
        "reports": [_report_dict(report) for report in reports],
    }
    return json.dumps(result, indent=2)


def format_runs_text(records: list[RunRecord]) -> str:
    """One line per run: iterations performed and first passing iteration."""
    if not records:
        return "No runs.\n"
    lines: list[str] = []
    for record in records:
        passed = record.first_pass_iteration
        status = f"passed at iteration {passed}" if passed else "never passed"
        lines.append(
            f"{record.method} run {record.run}: "
            f"{len(record.iterations)} iterations, {status}"
        )
    return "\n".join(lines) + "\n"


def format_runs_json(records: list[RunRecord]) -> str:
    """Per-run summaries as JSON, including estimator failure messages."""
    result: list[dict[str, Any]] = []
    for record in records:
        failures = [
            {"iteration": item.iteration, "estimator": o.name, "failure": o.failure}
            for item in record.iterations
            for o in item.outcomes
            if o.failure is not None
        ]
        result.append(
            {
                "run": record.run,
                "seed": record.seed,
                "method": record.method,
                "behavior_policy_id": record.behavior_policy_id,
                "iterations": len(record.iterations),
                "first_pass_iteration": record.first_pass_iteration,
                "stopped": record.stopped,
                "failures": failures,
            }
        )
    return json.dumps(result, indent=2)


def emit_outputs(records: list[RunRecord], cfg: ExperimentConfig) -> list[Path]:
    """Write results.csv, config.json, summary.json and figures to output_dir.

    Raises:
        ConfigError: If the output directory cannot be written.
    """
    out = Path(cfg.output_dir)
    rows = result_rows(records)
    written = [
        write_results_csv(rows, out / "results.csv"),
        write_text(format_config(cfg), out / "config.json"),
        write_text(format_runs_json(records) + "\n", out / "summary.json"),
    ]
    written.extend(write_figures(rows, out))
    return written
