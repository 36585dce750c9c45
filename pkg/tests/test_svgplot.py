import xml.etree.ElementTree as ET

import numpy as np
import pytest

from chimag.errors import ValidationError
from chimag.model import ResonatorParams, absorption, s_matrix_single
from chimag.svgplot import HeatmapData, LineData, PlotSpec, nice_ticks, render_plot


def absorption_plot():
    spec = s_matrix_single(ResonatorParams(6e9, 1.2e6, 2.4e6, 0.0), np.linspace(5.99e9, 6.01e9, 401))
    a21, a12 = absorption(spec)
    return LineData(spec.freqs / 1e9, [("A21", a21), ("A12", a12)]), PlotSpec("absorption", title="absorption")


def test_line_plot_is_valid_svg():
    data, spec = absorption_plot()
    root = ET.fromstring(render_plot(data, spec))
    assert root.tag.endswith("svg")
    assert len(root.findall(".//{http://www.w3.org/2000/svg}polyline")) >= 2


def test_deterministic_bytes():
    data, spec = absorption_plot()
    assert render_plot(data, spec) == render_plot(*absorption_plot())


def test_heatmap_pools_wide_input():
    x = np.linspace(0, 1, 1000)
    y = np.linspace(0, 1, 5)
    z = np.outer(y, x)
    svg = render_plot(HeatmapData(x, y, z, "dB"), PlotSpec("heatmap"))
    # pooled cells plus a short colour bar and the frame
    assert 400 * 5 <= svg.count("<rect") <= 400 * 5 + 64


@pytest.mark.parametrize(
    "data, kind",
    [
        (LineData(np.array([]), []), "spectrum"),
        (LineData(np.array([1.0, 2.0]), []), "spectrum"),
        (HeatmapData(np.array([]), np.array([]), np.zeros((0, 0))), "heatmap"),
    ],
)
def test_empty_data_rejected(data, kind):
    with pytest.raises(ValidationError):
        render_plot(data, PlotSpec(kind))


@pytest.mark.parametrize("kwargs", [dict(kind="pie"), dict(kind="spectrum", x_range=(1.0, 1.0)),
                                    dict(kind="phase", y_range=(0.0, float("inf")))])
def test_plot_spec_validation(kwargs):
    with pytest.raises(ValidationError):
        PlotSpec(**kwargs)


def test_nice_ticks_cover_range():
    ticks = nice_ticks(5.99, 6.01)
    assert ticks[0] >= 5.99 - 1e-12 and ticks[-1] <= 6.01 + 1e-12
    assert 3 <= len(ticks) <= 11
    steps = np.diff(ticks)
    np.testing.assert_allclose(steps, steps[0])
