"""
Minimal deterministic SVG line plots (no plotting dependency).
"""
import math

import numpy as np

_W, _H = 640, 420
_L, _R, _T, _B = 80, 20, 40, 60
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(v):
    if v == 0 or not np.isfinite(v):
        return "0"
    if 1e-3 <= abs(v) < 1e4:
        return f"{v:.4g}"
    return f"{v:.2e}"


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, (b - a) // 6)
        return [float(k) for k in range(a, b + 1, step) if lo - 1e-12 <= k <= hi + 1e-12]
    return list(np.linspace(lo, hi, 6))


def line_plot(series, title="", xlabel="", ylabel="", logx=False, logy=False):
    """
    Render ``series`` (list of (label, x, y)) as an SVG string.

    Non-finite points, and nonpositive points on log axes, are dropped.
    """
    pts = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        if logy:
            ok &= y > 0
        x, y = x[ok], y[ok]
        if logx:
            x = np.log10(x)
        if logy:
            y = np.log10(y)
        pts.append((label, x, y))
    allx = np.concatenate([p[1] for p in pts]) if pts else np.zeros(0)
    ally = np.concatenate([p[2] for p in pts]) if pts else np.zeros(0)
    if allx.size == 0:
        allx = ally = np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = _W - _L - _R, _H - _T - _B

    def X(v):
        return _L + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return _T + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
           f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="15" '
           f'font-family="sans-serif">{_esc(title)}</text>',
           f'<text x="{_L + pw / 2:.1f}" y="{_H - 15}" text-anchor="middle" font-size="12" '
           f'font-family="sans-serif">{_esc(xlabel)}</text>',
           f'<text x="18" y="{_T + ph / 2:.1f}" text-anchor="middle" font-size="12" '
           f'font-family="sans-serif" transform="rotate(-90 18 {_T + ph / 2:.1f})">'
           f'{_esc(ylabel)}</text>']
    for v in _ticks(x0, x1, logx):
        lab = _fmt(10**v) if logx else _fmt(v)
        out.append(f'<line x1="{X(v):.2f}" y1="{_T + ph}" x2="{X(v):.2f}" y2="{_T + ph + 5}" '
                   f'stroke="black"/><text x="{X(v):.2f}" y="{_T + ph + 18}" '
                   f'text-anchor="middle" font-size="10" font-family="sans-serif">{lab}</text>')
    for v in _ticks(y0, y1, logy):
        lab = _fmt(10**v) if logy else _fmt(v)
        out.append(f'<line x1="{_L - 5}" y1="{Y(v):.2f}" x2="{_L}" y2="{Y(v):.2f}" '
                   f'stroke="black"/><text x="{_L - 8}" y="{Y(v) + 3:.2f}" '
                   f'text-anchor="end" font-size="10" font-family="sans-serif">{lab}</text>')
    for k, (label, x, y) in enumerate(pts):
        c = _COLORS[k % len(_COLORS)]
        if x.size:
            d = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{d}"/>')
            if x.size <= 40:
                out.extend(f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="2.5" fill="{c}"/>'
                           for a, b in zip(x, y))
        out.append(f'<text x="{_L + pw - 10}" y="{_T + 16 + 15 * k}" text-anchor="end" '
                   f'font-size="11" font-family="sans-serif" fill="{c}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))
