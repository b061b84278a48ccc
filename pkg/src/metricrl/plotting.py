"""Minimal self-contained SVG charts (line and grouped bar) for run outputs."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2")

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 60


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.floor(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def _frame(title, xlabel, ylabel):
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'font-family="sans-serif" font-size="12">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{(LEFT + W - RIGHT) / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
             f'<text x="{(LEFT + W - RIGHT) / 2}" y="{H - 15}" text-anchor="middle">{escape(xlabel)}</text>',
             f'<text x="18" y="{(TOP + H - BOTTOM) / 2}" text-anchor="middle" '
             f'transform="rotate(-90 18 {(TOP + H - BOTTOM) / 2})">{escape(ylabel)}</text>']
    return parts


def _legend(parts, names):
    for k, name in enumerate(names):
        y = TOP + 10 + 20 * k
        parts.append(f'<rect x="{W - RIGHT + 15}" y="{y - 9}" width="12" height="12" '
                     f'fill="{PALETTE[k % len(PALETTE)]}"/>')
        parts.append(f'<text x="{W - RIGHT + 32}" y="{y + 2}">{escape(str(name))}</text>')


def _yaxis(parts, lo, hi, log=False):
    ph = H - TOP - BOTTOM
    ticks = _ticks(lo, hi)
    lo, hi = ticks[0], ticks[-1]

    def ymap(v):
        return TOP + ph * (1 - (v - lo) / (hi - lo))

    parts.append(f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>')
    parts.append(f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>')
    for t in ticks:
        y = ymap(t)
        label = f"1e{t:g}" if log else f"{t:g}"
        parts.append(f'<line x1="{LEFT - 4}" y1="{y:.1f}" x2="{LEFT}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{LEFT - 7}" y="{y + 4:.1f}" text-anchor="end">{label}</text>')
    return ymap


def line_chart(series, title="", xlabel="", ylabel="", log_y=False):
    """``series`` maps a name to a list of ``(x, y)``; ``y=None`` points are
    drawn as open markers at the top edge (censored)."""
    pts = [(x, y) for s in series.values() for x, y in s if y is not None]
    xs = [x for s in series.values() for x, _ in s] or [0, 1]
    tf = (lambda v: math.log10(v)) if log_y else (lambda v: v)
    ys = [tf(y) for _, y in pts] or [0.0, 1.0]
    parts = _frame(title, xlabel, ylabel)
    ymap = _yaxis(parts, min(ys), max(ys), log_y)
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    pw = W - LEFT - RIGHT

    def xmap(v):
        return LEFT + pw * (v - x_lo) / (x_hi - x_lo)

    for x in sorted(set(xs)):
        parts.append(f'<text x="{xmap(x):.1f}" y="{H - BOTTOM + 18}" text-anchor="middle">{x:g}</text>')
    for k, (name, s) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        done = [(xmap(x), ymap(tf(y))) for x, y in s if y is not None]
        if len(done) > 1:
            path = " ".join(f"{x:.1f},{y:.1f}" for x, y in done)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in done:
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="4" fill="{color}"/>')
        for x, y in s:
            if y is None:
                parts.append(f'<circle cx="{xmap(x):.1f}" cy="{TOP}" r="5" fill="white" stroke="{color}" '
                             f'stroke-width="2"><title>censored</title></circle>')
    _legend(parts, list(series))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(groups, title="", ylabel="", errors=None):
    """``groups`` maps a group label to ``{series_name: value}``."""
    names = []
    for g in groups.values():
        for n in g:
            if n not in names:
                names.append(n)
    vals = [v for g in groups.values() for v in g.values()] or [0.0]
    parts = _frame(title, "", ylabel)
    ymap = _yaxis(parts, min(0.0, min(vals)), max(1.0, max(vals)))
    pw = W - LEFT - RIGHT
    gw = pw / max(1, len(groups))
    bw = 0.8 * gw / max(1, len(names))
    for gi, (label, g) in enumerate(groups.items()):
        x0 = LEFT + gi * gw + 0.1 * gw
        parts.append(f'<text x="{LEFT + (gi + 0.5) * gw:.1f}" y="{H - BOTTOM + 18}" '
                     f'text-anchor="middle">{escape(str(label))}</text>')
        for k, n in enumerate(names):
            if n not in g:
                continue
            v = g[n]
            x = x0 + k * bw
            y0, y1 = ymap(0.0), ymap(v)
            parts.append(f'<rect x="{x:.1f}" y="{min(y0, y1):.1f}" width="{bw * 0.95:.1f}" '
                         f'height="{abs(y0 - y1):.1f}" fill="{PALETTE[k % len(PALETTE)]}"/>')
            err = (errors or {}).get(label, {}).get(n)
            if err:
                xc = x + bw * 0.475
                parts.append(f'<line x1="{xc:.1f}" y1="{ymap(v - err):.1f}" x2="{xc:.1f}" '
                             f'y2="{ymap(v + err):.1f}" stroke="black"/>')
    _legend(parts, names)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def quiver_chart(field_rows, title=""):
    """Arrow field from ``(x, y, dx, dy)`` rows, e.g. a discrete value gradient."""
    if not field_rows:
        return line_chart({}, title)
    xs = [r[0] for r in field_rows]
    ys = [r[1] for r in field_rows]
    nx, ny = max(xs) + 1, max(ys) + 1
    cell = min((W - LEFT - RIGHT) / nx, (H - TOP - BOTTOM) / ny)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>']
    for x, y, dx, dy in field_rows:
        cx = LEFT + (x + 0.5) * cell
        cy = TOP + (ny - y - 0.5) * cell
        norm = math.hypot(dx, dy)
        if norm == 0:
            parts.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="2" fill="black"/>')
            continue
        ex, ey = cx + 0.4 * cell * dx / norm, cy - 0.4 * cell * dy / norm
        parts.append(f'<line x1="{cx:.1f}" y1="{cy:.1f}" x2="{ex:.1f}" y2="{ey:.1f}" stroke="#1f77b4" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<circle cx="{ex:.1f}" cy="{ey:.1f}" r="1.8" fill="#1f77b4"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
