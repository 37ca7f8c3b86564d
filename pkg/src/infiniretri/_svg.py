"""Minimal hand-rolled SVG heatmaps.

Rendering goes through string formatting only -- same inputs, same bytes --
which is what lets the test suite compare whole output files.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

Color = tuple[int, int, int]

_ERROR_FILL = "#bdbdbd"   # cells with no usable value (e.g. a failed run)


def _hex(color: Color) -> str:
    r, g, b = (max(0, min(255, int(round(c)))) for c in color)
    return f"#{r:02x}{g:02x}{b:02x}"


def _lerp(a: Color, b: Color, t: float) -> Color:
    t = max(0.0, min(1.0, t))
    return tuple(a[i] + (b[i] - a[i]) * t for i in range(3))  # type: ignore[return-value]


def ramp_white_blue(v: float) -> str:
    """Linear white-to-blue scale; brightness is monotone in the value."""
    return _hex(_lerp((255, 255, 255), (8, 69, 148), v))


def ramp_green_red(v: float) -> str:
    """Score scale: 0 is red, 0.5 amber, 1 green."""
    if v <= 0.5:
        return _hex(_lerp((205, 43, 30), (252, 224, 139), v * 2.0))
    return _hex(_lerp((252, 224, 139), (22, 140, 70), (v - 0.5) * 2.0))


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def render_heatmap(values: np.ndarray,
                   row_labels: Sequence[str],
                   col_labels: Sequence[str],
                   *,
                   title: str = "",
                   ramp: Callable[[float], str] = ramp_white_blue,
                   cell_w: int = 46,
                   cell_h: int = 26,
                   show_values: bool = False,
                   value_fmt: str = "{:.2f}",
                   tooltips: Sequence[Sequence[str]] | None = None) -> str:
    """Render a labelled grid as an SVG document string.

    `values` must already be scaled to [0, 1]; NaN cells draw grey.
    """
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"expected a 2-D value grid, got shape {grid.shape}")
    rows, cols = grid.shape
    if len(row_labels) != rows or len(col_labels) != cols:
        raise ValueError(
            f"labels ({len(row_labels)} rows, {len(col_labels)} cols) do not match "
            f"grid shape {grid.shape}")

    left = 14 + 7 * max((len(s) for s in row_labels), default=1)
    top = (26 if title else 8) + 16
    width = left + cols * cell_w + 10
    height = top + rows * cell_h + 10

    out: list[str] = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
               f'height="{height}" font-family="monospace" font-size="11">')
    out.append(f'<rect width="{width}" height="{height}" fill="#ffffff"/>')
    if title:
        out.append(f'<text x="{left}" y="16" font-size="13">{_esc(title)}</text>')
    for j, label in enumerate(col_labels):
        x = left + j * cell_w + cell_w // 2
        out.append(f'<text x="{x}" y="{top - 4}" text-anchor="middle">{_esc(label)}</text>')
    for i, label in enumerate(row_labels):
        y = top + i * cell_h + cell_h // 2 + 4
        out.append(f'<text x="{left - 6}" y="{y}" text-anchor="end">{_esc(label)}</text>')
    for i in range(rows):
        for j in range(cols):
            v = float(grid[i, j])
            fill = _ERROR_FILL if math.isnan(v) else ramp(v)
            x, y = left + j * cell_w, top + i * cell_h
            tip = tooltips[i][j] if tooltips is not None else ""
            out.append(f'<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" '
                       f'fill="{fill}" stroke="#666666">'
                       + (f"<title>{_esc(tip)}</title>" if tip else "")
                       + "</rect>")
            if show_values:
                text = "n/a" if math.isnan(v) else value_fmt.format(v)
                out.append(f'<text x="{x + cell_w // 2}" y="{y + cell_h // 2 + 4}" '
                           f'text-anchor="middle">{_esc(text)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
