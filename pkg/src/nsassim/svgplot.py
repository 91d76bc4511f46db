"""Static SVG charts written directly, no plotting dependency.

Tables are the primary artifact; these figures are a reading aid.  Two
chart types cover the runner's needs: log-x line charts of per-stage
scalars, and a grayscale-to-warm heatmap of a field magnitude slice.
"""

import math

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 36, 48
_COLORS = ("#1f6fb2", "#c44e52", "#55a868", "#8172b2", "#937860")


def _fmt(v):
    return f"{v:.6g}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / max(n, 1)))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12 * span:
        out.append(t)
        t += step
    return out


def line_chart(path, xs, series, title="", xlabel="", ylabel="",
               logx=False, logy=False):
    """Write a polyline chart; series maps label -> list of y values."""
    tx = [math.log10(x) for x in xs] if logx else list(xs)
    all_y = [y for ys in series.values() for y in ys if y is not None]
    if logy:
        all_y = [math.log10(max(y, 1e-300)) for y in all_y]
    ylo, yhi = min(all_y), max(all_y)
    if yhi - ylo < 1e-12:
        ylo -= 0.5
        yhi += 0.5
    xlo, xhi = min(tx), max(tx)
    if xhi - xlo < 1e-12:
        xlo -= 0.5
        xhi += 0.5

    def sx(v):
        return _ML + (v - xlo) / (xhi - xlo) * (_W - _ML - _MR)

    def sy(v):
        return _H - _MB - (v - ylo) / (yhi - ylo) * (_H - _MT - _MB)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="11">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>']
    for t in _ticks(xlo, xhi):
        x = sx(t)
        label = _fmt(10 ** t) if logx else _fmt(t)
        parts.append(f'<line x1="{x:.1f}" y1="{_MT}" x2="{x:.1f}" y2="{_H - _MB}" '
                     'stroke="#dddddd"/>')
        parts.append(f'<text x="{x:.1f}" y="{_H - _MB + 16}" text-anchor="middle">{label}</text>')
    for t in _ticks(ylo, yhi):
        y = sy(t)
        label = _fmt(10 ** t) if logy else _fmt(t)
        parts.append(f'<line x1="{_ML}" y1="{y:.1f}" x2="{_W - _MR}" y2="{y:.1f}" '
                     'stroke="#dddddd"/>')
        parts.append(f'<text x="{_ML - 6}" y="{y + 4:.1f}" text-anchor="end">{label}</text>')
    parts.append(f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
                 f'height="{_H - _MT - _MB}" fill="none" stroke="#333333"/>')
    parts.append(f'<text x="{_W / 2}" y="{_H - 10}" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="16" y="{_H / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {_H / 2})">{ylabel}</text>')
    for idx, (label, ys) in enumerate(series.items()):
        color = _COLORS[idx % len(_COLORS)]
        pts = []
        for xv, yv in zip(tx, ys):
            if yv is None:
                continue
            yy = math.log10(max(yv, 1e-300)) if logy else yv
            pts.append(f"{sx(xv):.1f},{sy(yy):.1f}")
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                     f'stroke="{color}" stroke-width="1.6"/>')
        parts.append(f'<text x="{_W - _MR - 6}" y="{_MT + 16 + 14 * idx}" '
                     f'text-anchor="end" fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(parts))


def _ramp(v):
    """0..1 -> hex color, dark blue through white to deep red."""
    stops = [(0.0, (20, 40, 90)), (0.5, (245, 245, 245)), (1.0, (150, 20, 30))]
    for (t0, c0), (t1, c1) in zip(stops, stops[1:]):
        if v <= t1:
            f = (v - t0) / (t1 - t0) if t1 > t0 else 0.0
            rgb = tuple(round(a + f * (b - a)) for a, b in zip(c0, c1))
            return "#%02x%02x%02x" % rgb
    return "#%02x%02x%02x" % stops[-1][1]


def heatmap(path, values, title=""):
    """Write a cell heatmap of a 2D array (row 0 drawn at the bottom)."""
    ny = len(values)
    nx = len(values[0])
    vmax = max(max(abs(v) for v in row) for row in values) or 1.0
    cell = min((_W - _ML - _MR) / nx, (_H - _MT - _MB) / ny)
    x0, y0 = _ML, _H - _MB
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="11">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>']
    for j, row in enumerate(values):
        for i, v in enumerate(row):
            color = _ramp(min(abs(v) / vmax, 1.0))
            parts.append(
                f'<rect x="{x0 + i * cell:.1f}" y="{y0 - (j + 1) * cell:.1f}" '
                f'width="{cell + 0.5:.1f}" height="{cell + 0.5:.1f}" fill="{color}"/>')
    parts.append(f'<text x="{_ML}" y="{_H - 10}">max |value| = {_fmt(vmax)}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(parts))
