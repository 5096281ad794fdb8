"""Minimal self-contained SVG charts.

Output depends only on the data: coordinates are printed with fixed
precision and nothing time- or platform-dependent is embedded, so identical
inputs give byte-identical files.
"""

from __future__ import annotations

import math
from typing import Dict, Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=50)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def _num(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.4g}"


def _finite(values):
    return [v for v in values if v is not None and math.isfinite(v)]


def _frame(title, xlabel, ylabel):
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{HEIGHT / 2:.0f}" text-anchor="middle" transform="rotate(-90 16 {HEIGHT / 2:.0f})">'
        f"{escape(ylabel)}</text>",
    ]
    return out


def _axes(out, x0, x1, y0, y1):
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]
    out.append(f'<line x1="{L}" y1="{B}" x2="{R}" y2="{B}" stroke="black"/>')
    out.append(f'<line x1="{L}" y1="{T}" x2="{L}" y2="{B}" stroke="black"/>')
    for k in range(5):
        fy = k / 4
        y = B - fy * (B - T)
        out.append(f'<line x1="{L - 4}" y1="{_num(y)}" x2="{L}" y2="{_num(y)}" stroke="black"/>')
        out.append(f'<text x="{L - 6}" y="{_num(y + 4)}" text-anchor="end">{_label(y0 + fy * (y1 - y0))}</text>')
    if x1 is not None:
        for k in range(5):
            fx = k / 4
            x = L + fx * (R - L)
            out.append(f'<text x="{_num(x)}" y="{B + 16}" text-anchor="middle">{_label(x0 + fx * (x1 - x0))}</text>')


def line_chart(series: Dict[str, Sequence[float]], title: str, xlabel: str, ylabel: str,
               log_y: bool = False) -> str:
    """Polyline per named series against 1-based index."""
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]
    tf = (lambda v: math.log10(v)) if log_y else (lambda v: v)
    vals = [tf(v) for s in series.values() for v in _finite(s) if not log_y or v > 0]
    n = max((len(s) for s in series.values()), default=1)
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    out = _frame(title, xlabel, ylabel + (" (log10)" if log_y else ""))
    _axes(out, 1, max(n, 2), lo, hi)
    for k, (name, s) in enumerate(series.items()):
        pts = []
        for i, v in enumerate(s):
            if v is None or not math.isfinite(v) or (log_y and v <= 0):
                continue
            x = L + (i / max(n - 1, 1)) * (R - L)
            y = B - (tf(v) - lo) / (hi - lo) * (B - T)
            pts.append(f"{_num(x)},{_num(y)}")
        color = PALETTE[k % len(PALETTE)]
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{R - 150}" y="{T + 14 + 16 * k}" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(labels: Sequence[str], values: Sequence[float], title: str, ylabel: str) -> str:
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]
    finite = _finite(values)
    hi = max(finite) if finite else 1.0
    hi = hi if hi > 0 else 1.0
    out = _frame(title, "", ylabel)
    _axes(out, 0, None, 0.0, hi)
    n = max(len(labels), 1)
    slot = (R - L) / n
    for k, (lab, v) in enumerate(zip(labels, values)):
        x = L + k * slot + slot * 0.15
        w = slot * 0.7
        cx = L + (k + 0.5) * slot
        if v is not None and math.isfinite(v):
            h = max(v, 0.0) / hi * (B - T)
            out.append(f'<rect x="{_num(x)}" y="{_num(B - h)}" width="{_num(w)}" height="{_num(h)}" '
                       f'fill="{PALETTE[k % len(PALETTE)]}"/>')
            out.append(f'<text x="{_num(cx)}" y="{_num(B - h - 4)}" text-anchor="middle">{_label(v)}</text>')
        out.append(f'<text x="{_num(cx)}" y="{B + 16}" text-anchor="middle" font-size="10">{escape(lab)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
