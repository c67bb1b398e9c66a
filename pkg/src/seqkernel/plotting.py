"""Small standalone SVG line plots (no plotting dependency).

Output is fully determined by the input numbers, so the same data always
gives byte-identical documents.
"""

import math
from xml.sax.saxutils import escape

from .errors import EmptyPlot

LOG_FLOOR = 1e-16
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=170, top=40, bottom=60)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
MAX_POINTS = 2000


def _fmt(v):
    return f"{v:.2f}"


def _tick_label(v, log):
    if log:
        return f"1e{int(round(v))}"
    return f"{v:.3g}"


def _nice_ticks(lo, hi, count=5):
    if hi == lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def emit_svg(series, title="", x_label="", y_label="", log_y=False):
    """Render ``series`` (a list of ``(name, xs, ys)``) to an SVG string.

    With ``log_y`` values are plotted as log10; non-positive values are
    clamped to ``1e-16`` and a footnote records how many were clamped.
    Raises :class:`EmptyPlot` when there is nothing to draw.
    """
    series = [(str(name), list(xs), list(ys)) for name, xs, ys in series]
    if not series or all(len(xs) == 0 for _, xs, _ in series):
        raise EmptyPlot("no data to plot")
    clamped = 0
    prepared = []
    for name, xs, ys in series:
        if len(xs) != len(ys):
            raise ValueError(f"series {name!r} has {len(xs)} x values and {len(ys)} y values")
        pts = []
        for x, y in zip(xs[:MAX_POINTS], ys[:MAX_POINTS]):
            x, y = float(x), float(y)
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            if log_y:
                if y < LOG_FLOOR:
                    y = LOG_FLOOR
                    clamped += 1
                y = math.log10(y)
            pts.append((x, y))
        prepared.append((name, pts))
    all_pts = [p for _, pts in prepared for p in pts]
    if not all_pts:
        raise EmptyPlot("every value is non-finite")

    x_lo, x_hi = min(p[0] for p in all_pts), max(p[0] for p in all_pts)
    y_lo, y_hi = min(p[1] for p in all_pts), max(p[1] for p in all_pts)
    if log_y:
        y_lo, y_hi = math.floor(y_lo), math.ceil(y_hi)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1, y_hi + 1
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return MARGIN["top"] + (1 - (y - y_lo) / (y_hi - y_lo)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="14">'
                   f'{escape(title)}</text>')
    x0, y0 = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<rect x="{x0}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
               'fill="none" stroke="black"/>')

    if log_y:
        step = max(1, int(math.ceil((y_hi - y_lo) / 8)))
        y_ticks = list(range(int(y_lo), int(y_hi) + 1, step))
    else:
        y_ticks = _nice_ticks(y_lo, y_hi)
    for t in y_ticks:
        y = sy(t)
        out.append(f'<line x1="{x0 - 4}" y1="{_fmt(y)}" x2="{x0}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{_fmt(y + 4)}" text-anchor="end">'
                   f'{_tick_label(t, log_y)}</text>')
    for t in _nice_ticks(x_lo, x_hi):
        x = sx(t)
        out.append(f'<line x1="{_fmt(x)}" y1="{y0}" x2="{_fmt(x)}" y2="{y0 + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{y0 + 18}" text-anchor="middle">{t:.4g}</text>')
    if x_label:
        out.append(f'<text x="{x0 + pw / 2:.0f}" y="{HEIGHT - 22}" text-anchor="middle">'
                   f'{escape(x_label)}</text>')
    if y_label:
        cy = MARGIN["top"] + ph / 2
        out.append(f'<text x="16" y="{cy:.0f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {cy:.0f})">{escape(y_label)}</text>')

    for idx, (name, pts) in enumerate(prepared):
        color = COLORS[idx % len(COLORS)]
        if pts:
            path = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            for x, y in pts:
                out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="2" fill="{color}"/>')
        ly = MARGIN["top"] + 10 + 18 * idx
        lx = x0 + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
                   'stroke-width="2"/>')
        out.append(f'<text class="legend" x="{lx + 26}" y="{ly + 4}">{escape(name)}</text>')

    if clamped:
        out.append(f'<text class="footnote" x="{x0}" y="{HEIGHT - 6}" font-size="10">'
                   f'{clamped} value(s) at or below 1e-16 drawn at the axis floor</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, *args, **kwargs):
    text = emit_svg(*args, **kwargs)
    with open(path, "w") as fh:
        fh.write(text)
    return text
