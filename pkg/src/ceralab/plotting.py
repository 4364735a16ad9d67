"""Self-contained SVG line plots with byte-deterministic output.

No plotting dependency: results must re-render to identical bytes for the
idempotence guarantee, which rules out libraries that embed ids or dates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .errors import DomainError

PALETTE = ("#1f6fb2", "#d1495b", "#3a9e5f", "#8a5fbf", "#c98a1e", "#4a4a4a")
LOG_FLOOR_RATIO = 0.1  # non-positive values clamp to min_positive * this


@dataclass
class Series:
    label: str
    xs: list[float]
    ys: list[float]
    y_lo: list[float] | None = None
    y_hi: list[float] | None = None


@dataclass
class AxesSpec:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    xscale: str = "linear"
    yscale: str = "linear"
    width: int = 640
    height: int = 420


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:g}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return ticks


def _log_ticks(lo: float, hi: float) -> list[float]:
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(lo_e, hi_e + 1)
            if lo <= 10.0 ** e <= hi * (1 + 1e-12)]


def _clamp_log(values: list[float], axis: str) -> list[float]:
    positive = [v for v in values if v > 0.0]
    floor = (min(positive) if positive else 1.0) * LOG_FLOOR_RATIO
    out = []
    for v in values:
        if v <= 0.0:
            warnings.warn(
                f"non-positive value {v} on log-scale {axis} axis clamped to {floor:g}",
                stacklevel=3)
            out.append(floor)
        else:
            out.append(v)
    return out


def emit_plot(series: list[Series], axes: AxesSpec, path) -> None:
    """Write a line plot as a standalone SVG; identical input, identical bytes."""
    series = [s for s in series if s.xs]
    if not series:
        raise DomainError("emit_plot needs at least one non-empty series")
    for s in series:
        if len(s.xs) != len(s.ys):
            raise DomainError(f"series {s.label!r} has mismatched xs/ys")

    def prep(vals, scale, axis):
        return _clamp_log(list(vals), axis) if scale == "log" else list(vals)

    xs_all, ys_all = [], []
    prepped = []
    for s in series:
        xs = prep(s.xs, axes.xscale, "x")
        ys = prep(s.ys, axes.yscale, "y")
        lo = prep(s.y_lo, axes.yscale, "y") if s.y_lo is not None else None
        hi = prep(s.y_hi, axes.yscale, "y") if s.y_hi is not None else None
        prepped.append((s.label, xs, ys, lo, hi))
        xs_all.extend(xs)
        ys_all.extend(ys)
        ys_all.extend(lo or [])
        ys_all.extend(hi or [])

    def bounds(vals, scale):
        lo, hi = min(vals), max(vals)
        if scale == "log":
            return lo / 1.2, hi * 1.2
        pad = (hi - lo) * 0.08 or max(abs(hi), 1.0) * 0.08
        return lo - pad, hi + pad

    x0, x1 = bounds(xs_all, axes.xscale)
    y0, y1 = bounds(ys_all, axes.yscale)
    left, right, top, bottom = 62, 18, 34, 46
    pw = axes.width - left - right
    ph = axes.height - top - bottom

    def sx(v):
        if axes.xscale == "log":
            return left + pw * (math.log10(v) - math.log10(x0)) / (math.log10(x1) - math.log10(x0))
        return left + pw * (v - x0) / (x1 - x0)

    def sy(v):
        if axes.yscale == "log":
            return top + ph * (1 - (math.log10(v) - math.log10(y0)) / (math.log10(y1) - math.log10(y0)))
        return top + ph * (1 - (v - y0) / (y1 - y0))

    xticks = _log_ticks(x0, x1) if axes.xscale == "log" else _nice_ticks(x0, x1)
    yticks = _log_ticks(y0, y1) if axes.yscale == "log" else _nice_ticks(y0, y1)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{axes.width}" '
        f'height="{axes.height}" viewBox="0 0 {axes.width} {axes.height}">',
        f'<rect width="{axes.width}" height="{axes.height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
        'stroke="#888" stroke-width="1"/>',
    ]
    if axes.title:
        parts.append(f'<text x="{axes.width / 2:.1f}" y="20" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="14">{axes.title}</text>')
    for t in xticks:
        x = sx(t)
        parts.append(f'<line x1="{_fmt(x)}" y1="{top + ph}" x2="{_fmt(x)}" '
                     f'y2="{top + ph + 4}" stroke="#555"/>')
        parts.append(f'<text x="{_fmt(x)}" y="{top + ph + 17}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{_tick_label(t)}</text>')
    for t in yticks:
        y = sy(t)
        parts.append(f'<line x1="{left - 4}" y1="{_fmt(y)}" x2="{left}" '
                     f'y2="{_fmt(y)}" stroke="#555"/>')
        parts.append(f'<text x="{left - 7}" y="{_fmt(y + 3)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{_tick_label(t)}</text>')
    if axes.xlabel:
        parts.append(f'<text x="{left + pw / 2:.1f}" y="{axes.height - 8}" '
                     'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="12">{axes.xlabel}</text>')
    if axes.ylabel:
        cy = top + ph / 2
        parts.append(f'<text x="14" y="{cy:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12" '
                     f'transform="rotate(-90 14 {cy:.1f})">{axes.ylabel}</text>')

    for i, (label, xs, ys, lo, hi) in enumerate(prepped):
        color = PALETTE[i % len(PALETTE)]
        if lo is not None and hi is not None:
            for x, l, h in zip(xs, lo, hi):
                parts.append(f'<line x1="{_fmt(sx(x))}" y1="{_fmt(sy(l))}" '
                             f'x2="{_fmt(sx(x))}" y2="{_fmt(sy(h))}" '
                             f'stroke="{color}" stroke-width="1" opacity="0.55"/>')
        points = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
        if len(xs) > 1:
            parts.append(f'<polyline points="{points}" fill="none" '
                         f'stroke="{color}" stroke-width="1.6"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" '
                         f'fill="{color}"/>')
        ly = top + 14 + 15 * i
        lx = left + pw - 130
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 23}" y="{ly}" font-family="sans-serif" '
                     f'font-size="11">{label}</text>')
    parts.append("</svg>")
    with open(path, "wb") as fh:
        fh.write("\n".join(parts).encode("utf-8"))
