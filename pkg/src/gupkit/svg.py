"""Minimal SVG line and strip charts for diagnostics.

Output is plain text built from ``<polyline>``, ``<line>`` and ``<text>`` so
identical inputs give byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    label: str
    xs: Sequence[float]
    ys: Sequence[float]
    color: Optional[str] = None
    points_only: bool = False


@dataclass
class Panel:
    title: str
    series: List[Series] = field(default_factory=list)
    xlabel: str = ""
    ylabel: str = ""


def _num(v: float) -> str:
    return f"{v:.2f}"


def _bounds(panel: Panel) -> Tuple[float, float, float, float]:
    xs = [x for s in panel.series for x in s.xs if math.isfinite(x)]
    ys = [y for s in panel.series for y in s.ys if math.isfinite(y)]
    if not xs:
        return 0.0, 1.0, 0.0, 1.0
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    return x0, x1, y0 - pad, y1 + pad


def render(panels: Sequence[Panel], width: int = 720, panel_height: int = 300) -> str:
    """Stack ``panels`` vertically and return the SVG document as a string."""
    ml, mr, mt, mb = 60, 150, 30, 40
    height = panel_height * len(panels)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for k, panel in enumerate(panels):
        top = k * panel_height
        left, right = ml, width - mr
        y_top, y_bot = top + mt, top + panel_height - mb
        x0, x1, y0, y1 = _bounds(panel)

        def px(x: float) -> float:
            return left + (x - x0) / (x1 - x0) * (right - left)

        def py(y: float) -> float:
            return y_bot - (y - y0) / (y1 - y0) * (y_bot - y_top)

        out.append(f'<text x="{left}" y="{top + 18}" font-size="13">{escape(panel.title)}</text>')
        out.append(f'<line x1="{left}" y1="{y_bot}" x2="{right}" y2="{y_bot}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{y_top}" x2="{left}" y2="{y_bot}" stroke="black"/>')
        for i in range(5):
            xv = x0 + (x1 - x0) * i / 4
            yv = y0 + (y1 - y0) * i / 4
            out.append(f'<text x="{_num(px(xv))}" y="{y_bot + 14}" text-anchor="middle">{xv:.4g}</text>')
            out.append(f'<text x="{left - 4}" y="{_num(py(yv) + 4)}" text-anchor="end">{yv:.4g}</text>')
        if panel.xlabel:
            out.append(f'<text x="{(left + right) // 2}" y="{y_bot + 30}" text-anchor="middle">{escape(panel.xlabel)}</text>')
        if panel.ylabel:
            out.append(
                f'<text x="14" y="{(y_top + y_bot) // 2}" text-anchor="middle" '
                f'transform="rotate(-90 14 {(y_top + y_bot) // 2})">{escape(panel.ylabel)}</text>'
            )
        for j, s in enumerate(panel.series):
            color = s.color or PALETTE[j % len(PALETTE)]
            pts = [(px(x), py(y)) for x, y in zip(s.xs, s.ys) if math.isfinite(x) and math.isfinite(y)]
            if s.points_only or len(pts) == 1:
                out.extend(
                    f'<circle cx="{_num(a)}" cy="{_num(b)}" r="3" fill="{color}"/>' for a, b in pts
                )
            elif pts:
                path = " ".join(f"{_num(a)},{_num(b)}" for a, b in pts)
                out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            ly = y_top + 14 * j + 6
            out.append(f'<line x1="{right + 10}" y1="{ly}" x2="{right + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{right + 32}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
