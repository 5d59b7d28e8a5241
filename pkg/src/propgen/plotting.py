"""SVG rendering of open-water characteristic charts.

The chart follows the standard open-water convention: K_T, 10*K_Q and
eta plotted against advance ratio J, with torque scaled by ten so all
three traces share one vertical axis.  SVG is assembled by hand from
fixed-precision coordinates, so a given curve always renders to the
exact same bytes; no plotting dependency, no timestamps, no randomness.
"""

from pathlib import Path

import numpy as np

from .hydro import OpenWaterCurve

WIDTH = 720
HEIGHT = 480
MARGIN_LEFT = 64
MARGIN_RIGHT = 24
MARGIN_TOP = 44
MARGIN_BOTTOM = 56

SERIES_STYLE = (
    ("K_T", "#1f6fb2"),
    ("10 K_Q", "#c44e52"),
    ("eta", "#2e8b57"),
)


def nice_ticks(lo: float, hi: float, target: int = 6) -> np.ndarray:
    """Round tick positions covering [lo, hi] with a 1/2/5 step."""
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise ValueError(f"bad tick range [{lo}, {hi}]")
    raw = (hi - lo) / max(target, 2)
    power = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * power
        if raw <= step:
            break
    first = np.floor(lo / step) * step
    last = np.ceil(hi / step) * step
    n = int(round((last - first) / step)) + 1
    return np.round(first + step * np.arange(n), 12)


def _fmt(v: float) -> str:
    return f"{v:g}"


def _px(v: float) -> str:
    return f"{v:.2f}"


def open_water_chart(j, kt, kq, eta, title: str = "open-water characteristics") -> str:
    """Render one open-water chart to an SVG string."""
    j = np.asarray(j, dtype=float)
    series = [np.asarray(kt, dtype=float), 10.0 * np.asarray(kq, dtype=float),
              np.asarray(eta, dtype=float)]
    if j.ndim != 1 or j.size < 2:
        raise ValueError("need at least two curve points to draw a chart")
    for s in series:
        if s.shape != j.shape:
            raise ValueError("J and coefficient arrays must match in length")
        if not np.all(np.isfinite(s)):
            raise ValueError("coefficients must be finite")

    x_ticks = nice_ticks(0.0, float(j.max()))
    y_lo = min(0.0, float(min(s.min() for s in series)))
    y_hi = float(max(s.max() for s in series))
    y_ticks = nice_ticks(y_lo, y_hi)
    x0, x1 = float(x_ticks[0]), float(x_ticks[-1])
    y0, y1 = float(y_ticks[0]), float(y_ticks[-1])

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def to_x(v):
        return MARGIN_LEFT + (v - x0) / (x1 - x0) * plot_w

    def to_y(v):
        return MARGIN_TOP + (y1 - v) / (y1 - y0) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" font-family="sans-serif" '
        f'font-size="15" text-anchor="middle">{title}</text>',
    ]

    for tx in x_ticks:
        px = to_x(tx)
        parts.append(
            f'<line x1="{_px(px)}" y1="{MARGIN_TOP}" x2="{_px(px)}" '
            f'y2="{MARGIN_TOP + plot_h}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_px(px)}" y="{MARGIN_TOP + plot_h + 18}" '
            f'font-family="sans-serif" font-size="11" '
            f'text-anchor="middle">{_fmt(tx)}</text>'
        )
    for ty in y_ticks:
        py = to_y(ty)
        parts.append(
            f'<line x1="{MARGIN_LEFT}" y1="{_px(py)}" '
            f'x2="{MARGIN_LEFT + plot_w}" y2="{_px(py)}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{MARGIN_LEFT - 8}" y="{_px(py + 4)}" '
            f'font-family="sans-serif" font-size="11" '
            f'text-anchor="end">{_fmt(ty)}</text>'
        )

    # axes on top of the grid
    parts.append(
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" '
        f'height="{plot_h}" fill="none" stroke="#333333" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2:.0f}" y="{HEIGHT - 14}" '
        f'font-family="sans-serif" font-size="13" text-anchor="middle">'
        f'advance ratio J</text>'
    )
    parts.append(
        f'<text x="18" y="{MARGIN_TOP + plot_h / 2:.0f}" '
        f'font-family="sans-serif" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 18 {MARGIN_TOP + plot_h / 2:.0f})">'
        f'K_T, 10 K_Q, eta</text>'
    )

    for (label, color), values in zip(SERIES_STYLE, series):
        pts = " ".join(
            f"{_px(to_x(xv))},{_px(to_y(yv))}" for xv, yv in zip(j, values)
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="2"/>'
        )

    # legend, top right inside the frame
    lx = MARGIN_LEFT + plot_w - 120
    ly = MARGIN_TOP + 12
    for i, (label, color) in enumerate(SERIES_STYLE):
        yy = ly + 18 * i
        parts.append(
            f'<line x1="{lx}" y1="{yy}" x2="{lx + 26}" y2="{yy}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 32}" y="{yy + 4}" font-family="sans-serif" '
            f'font-size="12">{label}</text>'
        )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def chart_from_curve(curve: OpenWaterCurve, title: str = "open-water characteristics") -> str:
    """Chart a solver curve, keeping only its converged points."""
    mask = curve.converged
    if int(mask.sum()) < 2:
        raise ValueError("curve has fewer than two converged points")
    return open_water_chart(
        curve.J[mask], curve.kt[mask], curve.kq[mask], curve.eta[mask], title
    )


def write_chart(path, svg_text: str) -> None:
    Path(path).write_text(svg_text, encoding="utf-8")
