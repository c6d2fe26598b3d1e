"""
Copyright 2026 The popmarket Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""

import io
from collections.abc import Sequence

import matplotlib
import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .metrics import MetricSeries
from .model import InvalidArgumentError

# A fixed hash salt makes clip-path and marker ids stable between runs.
SVG_RC = {"svg.hashsalt": "popmarket", "svg.fonttype": "none"}


def emit_plot_svg(
    series: Sequence[MetricSeries],
    *,
    title: str = "",
    xlabel: str = "generation",
    ylabel: str = "",
    size: tuple[float, float] = (6.4, 4.0),
) -> str:
    """
    Renders each series as a line with one marker per point and error bars of one standard error.
    The line of series i carries the SVG id `series-<i>` and its error bars `errorbars-<i>`; points
    with a zero standard error get no bar.
    """
    if not series:
        raise InvalidArgumentError("cannot plot an empty list of series")
    for s in series:
        if not s.points:
            raise InvalidArgumentError(f"{s.metric} for {s.condition} has no points")

    with matplotlib.rc_context(SVG_RC):
        figure = Figure(figsize=size)
        FigureCanvasSVG(figure)
        axes = figure.add_subplot()
        for i, s in enumerate(series):
            color = f"C{i % 10}"
            x = np.array(s.indices, dtype=np.float64)
            y = np.array(s.values, dtype=np.float64)
            se = np.array([point.se for point in s.points], dtype=np.float64)
            axes.plot(x, y, color=color, marker="o", markersize=3, label=f"{s.condition} {s.metric}", gid=f"series-{i}")
            with_bars = se > 0.0
            if with_bars.any():
                container = axes.errorbar(
                    x[with_bars], y[with_bars], yerr=se[with_bars], fmt="none", ecolor=color, capsize=0
                )
                for bars in container.lines[2]:
                    bars.set_gid(f"errorbars-{i}")
        axes.set_title(title)
        axes.set_xlabel(xlabel)
        axes.set_ylabel(ylabel)
        axes.legend(frameon=False, fontsize="small")
        buffer = io.BytesIO()
        figure.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue().decode("utf-8")
