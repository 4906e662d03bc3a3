"""Minimal SVG line plots for metrics CSVs. No plotting dependencies."""

from __future__ import annotations

import math

WIDTH, HEIGHT = 800.0, 500.0
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70.0, 160.0, 30.0, 50.0

PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd",
           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(x: float) -> str:
    return format(x, ".6g")


def render_plot(series: list[tuple[str, list[float], list[float]]],
                x_label: str, y_label: str = "eval_acc") -> str:
    """Render one polyline per (label, xs, ys) series into an SVG string."""
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys)]
    if not pts:
        raise ValueError("nothing to plot")
    xs_all = [p[0] for p in pts]
    ys_all = [p[1] for p in pts]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.03 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    inner_w = WIDTH - MARGIN_L - MARGIN_R
    inner_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x: float) -> float:
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * inner_w

    def sy(y: float) -> float:
        return MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * inner_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:g}" '
           f'height="{HEIGHT:g}" viewBox="0 0 {WIDTH:g} {HEIGHT:g}">',
           f'<rect width="{WIDTH:g}" height="{HEIGHT:g}" fill="white"/>']
    axis = (f'M {MARGIN_L:g} {MARGIN_T:g} L {MARGIN_L:g} {MARGIN_T + inner_h:g} '
            f'L {MARGIN_L + inner_w:g} {MARGIN_T + inner_h:g}')
    out.append(f'<path d="{axis}" fill="none" stroke="black" stroke-width="1"/>')
    for x in _ticks(x_lo, x_hi):
        px = sx(x)
        out.append(f'<line x1="{px:.2f}" y1="{MARGIN_T + inner_h:g}" '
                   f'x2="{px:.2f}" y2="{MARGIN_T + inner_h + 5:g}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{MARGIN_T + inner_h + 20:g}" '
                   f'font-size="12" text-anchor="middle">{_fmt(x)}</text>')
    for y in _ticks(y_lo, y_hi):
        py = sy(y)
        out.append(f'<line x1="{MARGIN_L - 5:g}" y1="{py:.2f}" '
                   f'x2="{MARGIN_L:g}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_L - 8:g}" y="{py + 4:.2f}" '
                   f'font-size="12" text-anchor="end">{_fmt(y)}</text>')
    out.append(f'<text x="{MARGIN_L + inner_w / 2:g}" y="{HEIGHT - 10:g}" '
               f'font-size="13" text-anchor="middle">{x_label}</text>')
    out.append(f'<text x="18" y="{MARGIN_T + inner_h / 2:g}" font-size="13" '
               f'text-anchor="middle" transform="rotate(-90 18 '
               f'{MARGIN_T + inner_h / 2:g})">{y_label}</text>')

    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}"
                          for x, y in zip(xs, ys)
                          if not (math.isnan(x) or math.isnan(y)))
        out.append(f'<polyline points="{coords}" fill="none" '
                   f'stroke="{color}" stroke-width="1.8"/>')
        ly = MARGIN_T + 16 + 18 * i
        lx = MARGIN_L + inner_w + 12
        out.append(f'<line x1="{lx:g}" y1="{ly - 4:g}" x2="{lx + 22:g}" '
                   f'y2="{ly - 4:g}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 28:g}" y="{ly:g}" font-size="12">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
