"""Minimal deterministic SVG line plots and heatmaps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError

KINDS = ("spectrum", "phase", "absorption", "heatmap", "profile")
LINE_KINDS = ("spectrum", "phase", "absorption", "profile")

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 72, 24, 36, 56
PALETTE = ("#c0392b", "#2471a3", "#d4ac0d", "#229954", "#7d3c98", "#555555")
# viridis at 0, .25, .5, .75, 1
_CMAP = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=float)
MAX_HEATMAP_COLUMNS = 400
# room right of the frame for the colour bar and its labels
HEATMAP_EXTRA = 70


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    x_range: tuple[float, float] | None = None
    y_range: tuple[float, float] | None = None
    path: str | None = None
    title: str = ""
    x_label: str = ""
    y_label: str = ""

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"plot kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("x_range", "y_range"):
            rng = getattr(self, name)
            if rng is None:
                continue
            lo, hi = rng
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise ValidationError(f"{name} must be finite with min < max, got {rng!r}")


@dataclass(eq=False)
class LineData:
    x: np.ndarray
    series: list[tuple[str, np.ndarray]] = field(default_factory=list)


@dataclass(eq=False)
class HeatmapData:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray  # shape (len(y), len(x))
    colorbar_label: str = ""


def _n(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    span = hi - lo
    raw = span / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for m in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = m * mag
        if span / step <= target + 1:
            break
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    k = 0
    while start + k * step <= hi + 1e-9 * step:
        ticks.append(start + k * step)
        k += 1
    return ticks


def _tick_label(v: float, step: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e5 or abs(v) < 1e-3:
        return f"{v:.4g}"
    decimals = max(0, -int(math.floor(math.log10(step))) + (1 if step / 10 ** math.floor(math.log10(step)) == 2.5 else 0))
    return f"{v:.{decimals}f}"


def _auto_range(values: Sequence[np.ndarray]) -> tuple[float, float]:
    finite = np.concatenate([v[np.isfinite(v)] for v in values]) if values else np.array([])
    if finite.size == 0:
        return 0.0, 1.0
    lo, hi = float(finite.min()), float(finite.max())
    if lo == hi:
        pad = abs(lo) * 0.05 or 1.0
        return lo - pad, hi + pad
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


class _Frame:
    def __init__(self, xr, yr):
        self.x0, self.x1 = xr
        self.y0, self.y1 = yr
        self.w = WIDTH - LEFT - RIGHT
        self.h = HEIGHT - TOP - BOTTOM

    def px(self, x):
        return LEFT + (np.asarray(x) - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y):
        return TOP + (self.y1 - np.asarray(y)) / (self.y1 - self.y0) * self.h


def _axes(frame: _Frame, spec: PlotSpec, out: list[str]) -> None:
    out.append(
        f'<rect x="{LEFT}" y="{TOP}" width="{frame.w}" height="{frame.h}" fill="none" stroke="#000" stroke-width="1"/>'
    )
    for axis in ("x", "y"):
        lo, hi = (frame.x0, frame.x1) if axis == "x" else (frame.y0, frame.y1)
        ticks = nice_ticks(lo, hi)
        step = ticks[1] - ticks[0] if len(ticks) > 1 else (hi - lo)
        for t in ticks:
            label = escape(_tick_label(t, step))
            if axis == "x":
                x = _n(float(frame.px(t)))
                out.append(f'<line x1="{x}" y1="{TOP + frame.h}" x2="{x}" y2="{TOP + frame.h + 5}" stroke="#000"/>')
                out.append(f'<text x="{x}" y="{TOP + frame.h + 18}" text-anchor="middle" font-size="11">{label}</text>')
            else:
                y = _n(float(frame.py(t)))
                out.append(f'<line x1="{LEFT - 5}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="#000"/>')
                out.append(f'<text x="{LEFT - 8}" y="{y}" text-anchor="end" dominant-baseline="middle" font-size="11">{label}</text>')
    if spec.x_label:
        out.append(f'<text x="{LEFT + frame.w / 2:.2f}" y="{HEIGHT - 14}" text-anchor="middle" font-size="12">{escape(spec.x_label)}</text>')
    if spec.y_label:
        cy = TOP + frame.h / 2
        out.append(
            f'<text x="16" y="{cy:.2f}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {cy:.2f})">{escape(spec.y_label)}</text>'
        )
    if spec.title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(spec.title)}</text>')


def _segments(x: np.ndarray, y: np.ndarray):
    ok = np.isfinite(x) & np.isfinite(y)
    start = None
    for i, good in enumerate(ok):
        if good and start is None:
            start = i
        elif not good and start is not None:
            yield slice(start, i)
            start = None
    if start is not None:
        yield slice(start, len(ok))


def _render_lines(data: LineData, spec: PlotSpec) -> list[str]:
    x = np.asarray(data.x, dtype=float)
    ys = [np.asarray(y, dtype=float) for _, y in data.series]
    for y in ys:
        if y.shape != x.shape:
            raise ValidationError("every series must match the x axis length")
    xr = spec.x_range or _auto_range([x])
    yr = spec.y_range or _auto_range(ys)
    frame = _Frame(xr, yr)
    out: list[str] = []
    _axes(frame, spec, out)
    out.append(f'<clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{frame.w}" height="{frame.h}"/></clipPath>')
    for k, ((label, _), y) in enumerate(zip(data.series, ys)):
        color = PALETTE[k % len(PALETTE)]
        yc = np.where(np.isneginf(y), yr[0], np.where(np.isposinf(y), yr[1], y))
        for seg in _segments(x, yc):
            pts = " ".join(f"{_n(px)},{_n(py)}" for px, py in zip(frame.px(x[seg]), frame.py(yc[seg])))
            out.append(f'<polyline clip-path="url(#plot)" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 14 + 16 * k
        out.append(f'<line x1="{LEFT + frame.w - 110}" y1="{ly}" x2="{LEFT + frame.w - 90}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + frame.w - 84}" y="{ly}" dominant-baseline="middle" font-size="11">{escape(label)}</text>')
    return out


def _colour(t: float) -> str:
    t = min(max(t, 0.0), 1.0) * (len(_CMAP) - 1)
    i = min(int(t), len(_CMAP) - 2)
    frac = t - i
    rgb = _CMAP[i] * (1 - frac) + _CMAP[i + 1] * frac
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def _pool_columns(x: np.ndarray, z: np.ndarray):
    """Reduce to at most MAX_HEATMAP_COLUMNS by taking the minimum in each bin, which keeps dips visible."""
    n = x.size
    if n <= MAX_HEATMAP_COLUMNS:
        return x, z
    edges = np.linspace(0, n, MAX_HEATMAP_COLUMNS + 1).astype(int)
    xs = np.array([x[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])
    zs = np.column_stack([np.min(z[:, a:b], axis=1) for a, b in zip(edges[:-1], edges[1:])])
    return xs, zs


def _render_heatmap(data: HeatmapData, spec: PlotSpec) -> list[str]:
    x = np.asarray(data.x, dtype=float)
    y = np.asarray(data.y, dtype=float)
    z = np.asarray(data.z, dtype=float)
    if z.shape != (y.size, x.size):
        raise ValidationError(f"heatmap z has shape {z.shape}, expected {(y.size, x.size)}")
    x, z = _pool_columns(x, z)

    def edges(c):
        if c.size == 1:
            return np.array([c[0] - 0.5, c[0] + 0.5])
        mid = 0.5 * (c[1:] + c[:-1])
        return np.concatenate([[c[0] - (mid[0] - c[0])], mid, [c[-1] + (c[-1] - mid[-1])]])

    xe, ye = edges(x), edges(y)
    frame = _Frame(spec.x_range or (float(xe[0]), float(xe[-1])), spec.y_range or (float(ye[0]), float(ye[-1])))
    finite = z[np.isfinite(z)]
    zlo, zhi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if zlo == zhi:
        zhi = zlo + 1.0
    out: list[str] = []
    out.append(f'<clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{frame.w}" height="{frame.h}"/></clipPath>')
    out.append('<g clip-path="url(#plot)" shape-rendering="crispEdges">')
    px = frame.px(xe)
    py = frame.py(ye)
    for j in range(y.size):
        top, bot = min(py[j], py[j + 1]), max(py[j], py[j + 1])
        for i in range(x.size):
            v = z[j, i]
            t = 0.0 if np.isneginf(v) else 1.0 if not np.isfinite(v) else (v - zlo) / (zhi - zlo)
            out.append(
                f'<rect x="{_n(px[i])}" y="{_n(top)}" width="{_n(px[i + 1] - px[i])}" height="{_n(bot - top)}" fill="{_colour(t)}"/>'
            )
    out.append("</g>")
    _axes(frame, spec, out)
    # colour bar
    bx = WIDTH - RIGHT + 4
    for k in range(20):
        yk = TOP + frame.h * (1 - (k + 1) / 20)
        out.append(f'<rect x="{bx}" y="{_n(yk)}" width="10" height="{_n(frame.h / 20)}" fill="{_colour((k + 0.5) / 20)}"/>')
    # value labels sit beside the bar ends, clear of the x tick labels
    out.append(f'<text x="{bx + 14}" y="{TOP + 8}" font-size="10">{escape(f"{zhi:.3g}")}</text>')
    out.append(f'<text x="{bx + 14}" y="{_n(TOP + frame.h)}" font-size="10">{escape(f"{zlo:.3g}")}</text>')
    if data.colorbar_label:
        lx, ly = bx + 60, TOP + frame.h / 2
        out.append(
            f'<text x="{_n(lx)}" y="{_n(ly)}" text-anchor="middle" font-size="11" '
            f'transform="rotate(-90 {_n(lx)} {_n(ly)})">{escape(data.colorbar_label)}</text>'
        )
    return out


def render_plot(data: LineData | HeatmapData, spec: PlotSpec) -> str:
    """Self-contained SVG text; identical inputs give identical bytes."""
    if spec.kind == "heatmap":
        if not isinstance(data, HeatmapData):
            raise ValidationError("heatmap plots need HeatmapData")
        if np.size(data.z) == 0:
            raise ValidationError("cannot plot an empty dataset")
        body = _render_heatmap(data, spec)
    else:
        if not isinstance(data, LineData):
            raise ValidationError(f"{spec.kind} plots need LineData")
        if np.size(data.x) == 0 or not data.series:
            raise ValidationError("cannot plot an empty dataset")
        body = _render_lines(data, spec)
    width = WIDTH + (HEATMAP_EXTRA if spec.kind == "heatmap" else 0)
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{HEIGHT}" viewBox="0 0 {width} {HEIGHT}" '
        'font-family="sans-serif">\n'
        f'<rect width="{width}" height="{HEIGHT}" fill="#fff"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"
