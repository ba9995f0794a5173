"""Static bird's-eye trajectory plots (x-z plane) as hand-written SVG."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .trajectory import Trajectory

COLORS = ("#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")
DASHES = ("", "6,3", "2,2", "8,3,2,3")
SIZE = 600.0
MARGIN = 40.0
LEGEND_H = 18.0


def _num(x: float) -> str:
    return f"{x:.3f}"


def trajectory_svg(trajs: Sequence[Trajectory], labels: Sequence[str]) -> str:
    """One polyline per trajectory, equal axis scaling, x right and z up."""
    if not trajs:
        raise ValueError("nothing to plot")
    for label, t in zip(labels, trajs):
        if len(t) == 0:
            raise ValueError(f"trajectory {label!r} is empty")
    xz = [t.positions()[:, [0, 2]] for t in trajs]
    allp = np.vstack(xz)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    scale = (SIZE - 2 * MARGIN) / span
    legend = LEGEND_H * len(trajs)
    height = SIZE + legend

    def to_px(p: np.ndarray) -> tuple[float, float]:
        return MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(SIZE)}" height="{_num(height)}" '
        f'viewBox="0 0 {_num(SIZE)} {_num(height)}">',
        f'<rect x="0" y="0" width="{_num(SIZE)}" height="{_num(height)}" fill="#ffffff"/>',
    ]
    for k, (pts, label) in enumerate(zip(xz, labels)):
        color = COLORS[k % len(COLORS)]
        dash = DASHES[k % len(DASHES)]
        coords = " ".join(f"{_num(u)},{_num(v)}" for u, v in map(to_px, pts))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash_attr} '
            f'points="{coords}"><title>{_escape(label)}</title></polyline>'
        )
        y = SIZE + LEGEND_H * k + 12
        out.append(
            f'<line x1="{_num(MARGIN)}" y1="{_num(y - 4)}" x2="{_num(MARGIN + 24)}" y2="{_num(y - 4)}" '
            f'stroke="{color}" stroke-width="1.5"{dash_attr}/>'
        )
        out.append(
            f'<text x="{_num(MARGIN + 30)}" y="{_num(y)}" font-family="sans-serif" '
            f'font-size="12">{_escape(label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def tracks_csv(trajs: Sequence[Trajectory], labels: Sequence[str]) -> str:
    rows = ["track,frame,x,y,z"]
    for label, t in zip(labels, trajs):
        for k, p in enumerate(t.positions()):
            rows.append(f"{label},{k},{p[0]:.17g},{p[1]:.17g},{p[2]:.17g}")
    return "\n".join(rows) + "\n"


def write_plot(trajs, labels, svg_path: str | Path, csv_path: str | Path | None = None) -> None:
    Path(svg_path).write_text(trajectory_svg(trajs, labels))
    if csv_path is not None:
        Path(csv_path).write_text(tracks_csv(trajs, labels))


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
