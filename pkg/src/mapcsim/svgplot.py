"""Dependency-free SVG line charts for experiment tables."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def line_chart(path, series: dict, x_label: str, y_label: str, title: str = "",
               width: int = 560, height: int = 380):
    """Write a chart with one polyline per entry of ``series`` (name -> (xs, ys)).

    Axis labels are written verbatim so they can be matched to table columns.
    """
    ml, mr, mt, mb = 70, 130, 36, 56
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(v[0], float) for v in series.values()]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(v[1], float) for v in series.values()]) if series else np.zeros(1)
    ys = ys[np.isfinite(ys)] if np.isfinite(ys).any() else np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    pad = 0.05 * (y1 - y0 or abs(y1) or 1.0)
    y0, y1 = y0 - pad, y1 + pad
    if x1 == x0:
        x1 = x0 + 1.0

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.1f}" y="{mt + ph + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{sy(t):.1f}" y2="{sy(t):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text class="xlabel" x="{ml + pw / 2}" y="{height - 14}" '
               f'text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text class="ylabel" x="16" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2})">{escape(y_label)}</text>')
    if title:
        out.append(f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for i, (name, (xv, yv)) in enumerate(series.items()):
        c = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(xv, yv) if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{pts}"/>')
        for a, b in zip(xv, yv):
            if np.isfinite(b):
                out.append(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="3" fill="{c}"/>')
        ly = mt + 14 + 18 * i
        out.append(f'<line x1="{ml + pw + 12}" x2="{ml + pw + 32}" y1="{ly - 4}" y2="{ly - 4}" '
                   f'stroke="{c}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{ml + pw + 38}" y="{ly}">{escape(str(name))}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)


def table_chart(path, rows, x_col: str, y_col: str, group_col: str | None = None, title: str = ""):
    """Chart ``y_col`` against ``x_col`` from table rows, one line per ``group_col`` value."""
    series = {}
    for r in rows:
        key = r[group_col] if group_col else y_col
        series.setdefault(key, ([], []))
        series[key][0].append(float(r[x_col]))
        series[key][1].append(float(r[y_col]))
    return line_chart(path, series, x_col, y_col, title)
