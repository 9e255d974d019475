"""Minimal hand-written SVG plots (forest and trace), no plotting dependency."""

from __future__ import annotations

from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg(width, height, body):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def forest_svg(rows, reference=None, percent=False, width=640) -> str:
    """``rows`` are ``(label, estimate, lo, hi)``; an optional dashed reference line."""
    rows = list(rows)
    if not rows:
        raise ValueError("forest plot needs at least one row")
    scale = 100.0 if percent else 1.0
    vals = [v * scale for r in rows for v in r[1:4]]
    if reference is not None:
        vals.append(reference * scale)
    lo, hi = min(vals), max(vals)
    pad = 0.08 * (hi - lo or 1.0)
    lo, hi = lo - pad, hi + pad
    left, right, top, step = 200, 30, 20, 28
    height = top + step * len(rows) + 40

    def x(v):
        return left + (v * scale - lo) / (hi - lo) * (width - left - right)

    body = []
    if reference is not None:
        xr = x(reference)
        body.append(f'<line x1="{xr:.1f}" y1="{top - 5}" x2="{xr:.1f}" y2="{height - 35}" stroke="#888" stroke-dasharray="4 3"/>')
    for i, (label, est, a, b) in enumerate(rows):
        y = top + step * i + step / 2
        body.append(f'<text x="{left - 10}" y="{y + 4:.1f}" text-anchor="end">{escape(str(label))}</text>')
        body.append(f'<line x1="{x(a):.1f}" y1="{y:.1f}" x2="{x(b):.1f}" y2="{y:.1f}" stroke="#333" stroke-width="1.5"/>')
        body.append(f'<circle cx="{x(est):.1f}" cy="{y:.1f}" r="4" fill="{PALETTE[0]}"/>')
    yb = height - 30
    body.append(f'<line x1="{left}" y1="{yb}" x2="{width - right}" y2="{yb}" stroke="#333"/>')
    for t in np.linspace(lo, hi, 5):
        xt = left + (t - lo) / (hi - lo) * (width - left - right)
        body.append(f'<text x="{xt:.1f}" y="{yb + 16}" text-anchor="middle">{t:.3g}{"%" if percent else ""}</text>')
    return _svg(width, height, body)


def trace_svg(draws, names=None, width=640, panel=110) -> str:
    """One panel per parameter, one polyline per chain."""
    names = [n for n in (names or draws.names) if "[" not in n]
    height = panel * len(names) + 10
    body = []
    for i, name in enumerate(names):
        top = 5 + panel * i
        v = np.asarray(draws[name])
        vlo, vhi = float(v.min()), float(v.max())
        span = vhi - vlo or 1.0
        body.append(f'<text x="5" y="{top + 14}">{escape(name)}</text>')
        for c, chain in enumerate(np.unique(draws.chain)):
            cv = v[draws.chain == chain]
            xs = np.linspace(90, width - 10, len(cv))
            ys = top + panel - 15 - (cv - vlo) / span * (panel - 30)
            pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(xs, ys))
            body.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[c % len(PALETTE)]}" stroke-width="0.6" opacity="0.8"/>')
    return _svg(width, height, body)
