"""A very small SVG line-plot writer (polylines, axes, tick labels)."""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT, MARGIN = 640, 400, 56
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def line_plot(x: Sequence[float], ys: dict[str, Sequence[float]], title: str = "", xlabel: str = "",
              ylabel: str = "", log_y: bool = False) -> str:
    """Polylines of each named series against x; non-finite or (for log_y) non-positive points are skipped."""
    def tr(v):
        if v is None:
            return None
        v = float(v)
        if log_y:
            return math.log10(v) if v > 0 else None
        return v if math.isfinite(v) else None

    pts = {name: [(float(a), tr(b)) for a, b in zip(x, y) if tr(b) is not None] for name, y in ys.items()}
    xs = [a for p in pts.values() for a, _ in p] or [0.0, 1.0]
    yv = [b for p in pts.values() for _, b in p] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(yv), max(yv)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(v):
        return MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN)

    def sy(v):
        return HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
           f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.1f}" y="{HEIGHT - MARGIN + 16}" font-size="11" '
                   f'text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        label = f"1e{t:.2g}" if log_y else f"{t:.3g}"
        out.append(f'<text x="{MARGIN - 6}" y="{sy(t) + 4:.1f}" font-size="11" text-anchor="end">{label}</text>')
    for i, (name, p) in enumerate(pts.items()):
        color = COLORS[i % len(COLORS)]
        if p:
            coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in p)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 14 * i}" font-size="11" fill="{color}" '
                   f'text-anchor="end">{escape(name)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" font-size="11" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{HEIGHT / 2}" font-size="11" text-anchor="middle" '
               f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(values, x_range: tuple[float, float], y_range: tuple[float, float], title: str = "") -> str:
    """Grey-scale cells of a 2-D array (row index along y), for marginal densities."""
    import numpy as np

    v = np.asarray(values, dtype=float)
    ny, nx = v.shape
    top = float(v.max()) if v.size and v.max() > 0 else 1.0
    cw = (WIDTH - 2 * MARGIN) / nx
    ch = (HEIGHT - 2 * MARGIN) / ny
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    for j in range(ny):
        for i in range(nx):
            if v[j, i] <= 0:
                continue
            g = int(255 * (1 - v[j, i] / top))
            out.append(f'<rect x="{MARGIN + i * cw:.2f}" y="{HEIGHT - MARGIN - (j + 1) * ch:.2f}" '
                       f'width="{cw:.2f}" height="{ch:.2f}" fill="rgb({g},{g},{g})"/>')
    out.append(f'<text x="{WIDTH / 2}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="11">{x_range[0]:.3g}</text>')
    out.append(f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="11" '
               f'text-anchor="end">{x_range[1]:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
