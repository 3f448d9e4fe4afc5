"""Bare-bones SVG line and bar charts (no plotting dependency)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H, PAD = 480, 300, 40


def _frame(title: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
    ]


def _scale(v, lo, hi, a, b):
    if hi == lo:
        return (a + b) / 2
    return a + (v - lo) * (b - a) / (hi - lo)


def line_plot(path, x, series: dict, title: str = "") -> None:
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    lo = min(float(v.min()) for v in ys.values())
    hi = max(float(v.max()) for v in ys.values())
    parts = _frame(title)
    for k, (name, y) in enumerate(ys.items()):
        pts = " ".join(
            f"{_scale(a, x.min(), x.max(), PAD, W - PAD):.1f},{_scale(b, lo, hi, H - PAD, PAD):.1f}"
            for a, b in zip(x, y)
        )
        color = _COLORS[k % len(_COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" points="{pts}"/>')
        parts.append(f'<text x="{W - PAD}" y="{PAD + 14 * k}" text-anchor="end" font-size="11" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def histogram_plot(path, edges, series: dict, title: str = "") -> None:
    edges = np.asarray(edges, dtype=float)
    parts = _frame(title)
    for k, (name, counts) in enumerate(series.items()):
        counts = np.asarray(counts, dtype=float)
        total = counts.sum() or 1.0
        frac = counts / total
        top = frac.max() or 1.0
        color = _COLORS[k % len(_COLORS)]
        for left, right, f in zip(edges[:-1], edges[1:], frac):
            if f == 0:
                continue
            x0 = _scale(left, edges[0], edges[-1], PAD, W - PAD)
            x1 = _scale(right, edges[0], edges[-1], PAD, W - PAD)
            y = _scale(f, 0, top, H - PAD, PAD)
            parts.append(
                f'<rect x="{x0:.1f}" y="{y:.1f}" width="{max(x1 - x0, 0.5):.1f}" '
                f'height="{H - PAD - y:.1f}" fill="{color}" fill-opacity="0.5"/>'
            )
        parts.append(f'<text x="{W - PAD}" y="{PAD + 14 * k}" text-anchor="end" font-size="11" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
