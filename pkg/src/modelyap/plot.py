"""Byte-reproducible SVG line charts of normalised lambda(t) curves."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 480
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 30, 60

MODE_COLORS = {
    "ECB": "#1f77b4",
    "CBC": "#ff7f0e",
    "OFB": "#2ca02c",
    "CFB": "#d62728",
    "CTR": "#9467bd",
    "PCBC": "#8c564b",
}
_FALLBACK = ("#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _color(label: str, index: int) -> str:
    key = label.split("/")[-1].split()[0].upper()
    return MODE_COLORS.get(key, _FALLBACK[index % len(_FALLBACK)])


def render_svg(series: Sequence[tuple[str, Sequence[float]]], title: str = "") -> str:
    """One polyline per ``(label, normalised curve)``; all curves share a length."""
    if not series:
        raise ValueError("nothing to plot")
    lengths = {len(c) for _, c in series}
    if len(lengths) != 1:
        raise ValueError(f"curves have different lengths {sorted(lengths)}")
    T = lengths.pop()
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def x_of(t):
        return LEFT + pw * (t - 1) / max(T - 1, 1)

    def y_of(v):
        return TOP + ph * (1.0 - min(max(v, 0.0), 1.0))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{LEFT + pw / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>')
    # axes and ticks
    out.append(
        f'<path d="M{LEFT} {TOP} V{TOP + ph} H{LEFT + pw}" fill="none" stroke="black" stroke-width="1"/>'
    )
    for k in range(6):
        v = k / 5
        y = y_of(v)
        out.append(f'<line x1="{LEFT - 4}" y1="{y:.2f}" x2="{LEFT}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    for t in np.unique(np.linspace(1, T, num=min(T, 6)).round().astype(int)):
        x = x_of(int(t))
        out.append(f'<line x1="{x:.2f}" y1="{TOP + ph}" x2="{x:.2f}" y2="{TOP + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{TOP + ph + 18}" text-anchor="middle">{int(t)}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">t</text>')
    out.append(
        f'<text x="18" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {TOP + ph / 2:.1f})">lambda(t) / lambda_m</text>'
    )
    for i, (label, curve) in enumerate(series):
        color = _color(label, i)
        pts = " ".join(
            f"{x_of(t):.2f},{y_of(v):.2f}" for t, v in enumerate(curve, start=1) if np.isfinite(v)
        )
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 10 + 18 * i
        lx = LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, series, title: str = "") -> None:
    Path(path).write_text(render_svg(series, title))
