"""Static SVG charts written as plain text (no display or plotting backend).

Output is a pure function of the data: fixed number formatting, no dates or
random ids, so reruns produce identical files.
"""
from __future__ import annotations

import math

import numpy as np

W, H = 640, 400
PAD = dict(left=70, right=20, top=40, bottom=55)
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def _f(x):
    return f"{x:.2f}"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0 ** k for k in range(a, b + 1) if lo * (1 - 1e-9) <= 10.0 ** k <= hi * (1 + 1e-9)]
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / 5)) if span > 0 else 1.0
    for m in (1, 2, 5, 10):
        if span / (m * step) <= 6:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _label(v, log):
    if log:
        return f"1e{int(round(math.log10(v)))}"
    return f"{v:.3g}"


class _Axes:
    def __init__(self, xs, ys, logx, logy):
        xs, ys = np.concatenate(xs), np.concatenate(ys)
        ok = np.isfinite(xs) & np.isfinite(ys)
        if logx:
            ok &= xs > 0
        if logy:
            ok &= ys > 0
        xs, ys = xs[ok], ys[ok]
        if not xs.size:
            xs, ys = np.array([1.0, 10.0]), np.array([1.0, 10.0])
        self.logx, self.logy = logx, logy
        self.x0, self.x1 = self._range(xs, logx)
        self.y0, self.y1 = self._range(ys, logy)

    @staticmethod
    def _range(v, log):
        lo, hi = float(v.min()), float(v.max())
        if log:
            lo, hi = 10 ** math.floor(math.log10(lo)), 10 ** math.ceil(math.log10(hi))
            return (lo, hi) if hi > lo else (lo / 10, hi * 10)
        if hi == lo:
            return lo - 1, hi + 1
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad

    def _t(self, v, lo, hi, log):
        if log:
            v, lo, hi = np.log10(v), math.log10(lo), math.log10(hi)
        return (v - lo) / (hi - lo)

    def px(self, x):
        return PAD["left"] + self._t(x, self.x0, self.x1, self.logx) * (W - PAD["left"] - PAD["right"])

    def py(self, y):
        return H - PAD["bottom"] - self._t(y, self.y0, self.y1, self.logy) * (H - PAD["top"] - PAD["bottom"])


def _frame(ax, title, xlabel, ylabel):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>']
    x0, x1 = PAD["left"], W - PAD["right"]
    y0, y1 = H - PAD["bottom"], PAD["top"]
    out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>')
    for v in _ticks(ax.x0, ax.x1, ax.logx):
        p = _f(ax.px(v))
        out.append(f'<line x1="{p}" y1="{y0}" x2="{p}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{p}" y="{y0 + 18}" text-anchor="middle">{_label(v, ax.logx)}</text>')
    for v in _ticks(ax.y0, ax.y1, ax.logy):
        p = _f(ax.py(v))
        out.append(f'<line x1="{x0 - 5}" y1="{p}" x2="{x0}" y2="{p}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{p}" text-anchor="end" dominant-baseline="middle">'
                   f'{_label(v, ax.logy)}</text>')
    out.append(f'<text x="{(x0 + x1) / 2}" y="{H - 12}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{(y0 + y1) / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(y0 + y1) / 2})">{_esc(ylabel)}</text>')
    return out


def _write(path, parts):
    with open(path, "w") as fh:
        fh.write("\n".join(parts + ["</svg>"]) + "\n")


def line_chart(path, series, *, title="", xlabel="", ylabel="", logx=False, logy=False, markers=True):
    """``series`` is a list of (label, x, y); non-finite points are skipped."""
    series = [(lab, np.asarray(x, dtype=float), np.asarray(y, dtype=float)) for lab, x, y in series]
    ax = _Axes([s[1] for s in series], [s[2] for s in series], logx, logy)
    parts = _frame(ax, title, xlabel, ylabel)
    for k, (lab, x, y) in enumerate(series):
        c = COLORS[k % len(COLORS)]
        ok = np.isfinite(x) & np.isfinite(y) & ((x > 0) if logx else True) & ((y > 0) if logy else True)
        pts = " ".join(f"{_f(ax.px(a))},{_f(ax.py(b))}" for a, b in zip(x[ok], y[ok]))
        if pts:
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
            if markers:
                parts += [f'<circle cx="{_f(ax.px(a))}" cy="{_f(ax.py(b))}" r="2.5" fill="{c}"/>'
                          for a, b in zip(x[ok], y[ok])]
        parts.append(f'<text x="{W - PAD["right"] - 8}" y="{PAD["top"] + 16 + 16 * k}" text-anchor="end" '
                     f'fill="{c}">{_esc(lab)}</text>')
    _write(path, parts)


def _diverging(v):
    """v in [-1, 1] -> blue (negative), white (0), red (positive)."""
    v = float(np.clip(v, -1, 1))
    if v >= 0:
        r, g, b = 255, int(round(255 * (1 - v))), int(round(255 * (1 - v)))
    else:
        r, g, b = int(round(255 * (1 + v))), int(round(255 * (1 + v))), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def boundary_strip(path, t, values, *, title="", label="boundary parameter t", symlog=True):
    """Heat strip of a boundary density against the curve parameter, with the
    signed profile drawn underneath. ``symlog`` compresses the colour scale by
    asinh so that peaks and the far field are both visible."""
    t = np.asarray(t, dtype=float) % 1.0
    v = np.asarray(values, dtype=float)
    order = np.argsort(t, kind="stable")
    t, v = t[order], v[order]
    scale = np.abs(v).max() if v.size and np.abs(v).max() > 0 else 1.0
    c = np.arcsinh(v / scale * 1e3) / np.arcsinh(1e3) if symlog else v / scale
    x0, x1 = PAD["left"], W - PAD["right"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
             f'font-family="sans-serif" font-size="12">', f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>']
    edges = np.concatenate([[0.0], 0.5 * (t[1:] + t[:-1]), [1.0]]) if t.size else np.array([0.0, 1.0])
    for k in range(t.size):
        xa, xb = x0 + edges[k] * (x1 - x0), x0 + edges[k + 1] * (x1 - x0)
        parts.append(f'<rect x="{_f(xa)}" y="40" width="{_f(max(xb - xa, 0.01))}" height="60" '
                     f'fill="{_diverging(c[k])}"/>')
    parts.append(f'<rect x="{x0}" y="40" width="{x1 - x0}" height="60" fill="none" stroke="black"/>')
    ya, yb = 130.0, H - PAD["bottom"]
    mid = 0.5 * (ya + yb)
    parts.append(f'<rect x="{x0}" y="{ya}" width="{x1 - x0}" height="{yb - ya}" fill="none" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{_f(mid)}" x2="{x1}" y2="{_f(mid)}" stroke="#999"/>')
    pts = " ".join(f"{_f(x0 + a * (x1 - x0))},{_f(mid - 0.5 * (yb - ya) * b)}" for a, b in zip(t, c))
    if pts:
        parts.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
    for k in range(5):
        x = x0 + k / 4 * (x1 - x0)
        parts.append(f'<text x="{_f(x)}" y="{yb + 18}" text-anchor="middle">{k / 4:g}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2}" y="{H - 12}" text-anchor="middle">{_esc(label)}</text>')
    parts.append(f'<text x="{x0}" y="120">max |density| = {scale:.6g}'
                 f'{" (asinh colour scale)" if symlog else ""}</text>')
    _write(path, parts)


def mesh_plot(path, mesh, *, title="mesh", marks=()):
    """Triangle edges plus optional marked points (e.g. concentration points)."""
    x = mesh.nodes
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = float(max(hi - lo))
    s = (min(W, H) - 60) / span
    ox, oy = 30 - lo[0] * s, H - 30 + lo[1] * s

    def p(q):
        return f"{_f(ox + q[0] * s)},{_f(oy - q[1] * s)}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
             f'font-family="sans-serif" font-size="12">', f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="14">{_esc(title)}</text>']
    d = " ".join(f"M{p(x[a])}L{p(x[b])}" for a, b in mesh.edges)
    parts.append(f'<path d="{d}" stroke="#555" stroke-width="0.3" fill="none"/>')
    for q in marks:
        parts.append(f'<circle cx="{_f(ox + q[0] * s)}" cy="{_f(oy - q[1] * s)}" r="4" fill="none" '
                     f'stroke="#d62728" stroke-width="1.5"/>')
    _write(path, parts)


__all__ = ["line_chart", "boundary_strip", "mesh_plot"]
