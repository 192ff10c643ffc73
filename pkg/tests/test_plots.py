"""Tests for SVG figures."""

from pathlib import Path
import tempfile
import xml.etree.ElementTree as ET

from conftest import run_record
from safeeval.aggregator import aggregate, result_rows
from safeeval.plots import plot_bounds, plot_tv, write_figures

SVG = "{http://www.w3.org/2000/svg}svg"


def _is_svg(path: Path) -> bool:
    return ET.parse(path).getroot().tag == SVG


class TestFigures:
    """Test figure files."""

    def test_bounds_figure_is_svg(self) -> None:
        """The bounds figure is well-formed SVG."""
        table = aggregate(
            [run_record(0, [-150.0, -130.0, -120.0]), run_record(1, [-50.0])]
        )
        with tempfile.TemporaryDirectory() as tmpdir:
            path = plot_bounds(table, Path(tmpdir) / "figure2_ddqn.svg")
            assert _is_svg(path)

    def test_bounds_figure_without_true_values(self) -> None:
        """Runs without the oracle still plot."""
        table = aggregate([run_record(0, [None, None, None])])
        with tempfile.TemporaryDirectory() as tmpdir:
            assert _is_svg(plot_bounds(table, Path(tmpdir) / "f.svg"))

    def test_tv_figure_for_several_methods(self) -> None:
        """One distance figure covers every method."""
        tables = [
            aggregate([run_record(0, [-150.0] * 3, method=method)])
            for method in ("bc", "ddqn", "bcq")
        ]
        with tempfile.TemporaryDirectory() as tmpdir:
            assert _is_svg(plot_tv(tables, Path(tmpdir) / "figure3.svg"))

    def test_write_figures(self) -> None:
        """One bounds figure per method plus the distance figure."""
        rows = result_rows(
            [
                run_record(0, [-150.0] * 3, method="bc"),
                run_record(0, [-150.0] * 3, method="bcq"),
            ]
        )
        with tempfile.TemporaryDirectory() as tmpdir:
            paths = write_figures(rows, tmpdir)
            assert [p.name for p in paths] == [
                "figure2_bc.svg",
                "figure2_bcq.svg",
                "figure3.svg",
            ]
            assert all(_is_svg(p) for p in paths)
