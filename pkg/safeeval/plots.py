"""Static SVG figures of aggregated results.

figure2_<method>.svg shows each estimator's lower bound and the true value
against iteration, with the behavior value estimate as a horizontal baseline.
figure3.svg shows the behavior-to-policy total variation distance per method.
Shaded bands are one standard error.
"""

from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")

from matplotlib.axes import Axes  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from safeeval.aggregator import (  # noqa: E402
    aggregate_rows,
    AggregateTable,
    group_by_method,
    ResultRow,
    SeriesPoint,
)
from safeeval.errors import ConfigError  # noqa: E402

# Fixed id salt and no date stamp keep the SVG bytes reproducible.
_SVG_STYLE = {"svg.hashsalt": "safeeval", "svg.fonttype": "path"}
_SVG_METADATA = {"Date": None}


def _arrays(points: tuple[SeriesPoint, ...]) -> tuple[np.ndarray, np.ndarray]:
    mean = np.array([np.nan if p.mean is None else p.mean for p in points])
    se = np.array([0.0 if p.se is None else p.se for p in points])
    return mean, se


def _band(
    ax: Axes, x: np.ndarray, points: tuple[SeriesPoint, ...], **kw: Any
) -> None:
    mean, se = _arrays(points)
    (line,) = ax.plot(x, mean, marker="o", **kw)
    ax.fill_between(x, mean - se, mean + se, color=line.get_color(), alpha=0.2)


def _save(fig: Figure, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def plot_bounds(table: AggregateTable, path: str | Path) -> Path:
    """Lower bounds and true value of one method against iteration."""
    x = np.array(table.iterations)
    with plt.rc_context(_SVG_STYLE):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for name in table.estimators:
            points = table.series[f"{name}.lower_bound"]
            _band(ax, x, points, label=f"{name.upper()} bound")
        true_value = table.series["true_value"]
        if any(p.mean is not None for p in true_value):
            _band(ax, x, true_value, label="true value", linestyle="--", color="black")
        baseline, _ = _arrays(table.series["vb_hat"])
        if np.isfinite(baseline).any():
            ax.axhline(
                float(np.nanmean(baseline)),
                color="gray",
                linestyle=":",
                label="behavior value",
            )
        ax.set_xlabel("iteration")
        ax.set_ylabel("return")
        ax.set_title(f"{table.method.upper()} ({table.runs} runs)")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best")
        return _save(fig, Path(path))


def plot_tv(tables: list[AggregateTable], path: str | Path) -> Path:
    """Mean total variation distance of every method against iteration."""
    with plt.rc_context(_SVG_STYLE):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for table in tables:
            x = np.array(table.iterations)
            _band(ax, x, table.series["tv_distance"], label=table.method.upper())
        ax.set_xlabel("iteration")
        ax.set_ylabel("total variation distance")
        ax.grid(True, alpha=0.3)
        if tables:
            ax.legend(loc="best")
        return _save(fig, Path(path))


def write_figures(rows: list[ResultRow], out: str | Path) -> list[Path]:
    """One bounds figure per method plus the shared distance figure."""
    out = Path(out)
    tables = [aggregate_rows(group) for group in group_by_method(rows).values()]
    written = [plot_bounds(t, out / f"figure2_{t.method}.svg") for t in tables]
    written.append(plot_tv(tables, out / "figure3.svg"))
    return written
