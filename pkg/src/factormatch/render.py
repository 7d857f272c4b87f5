"""SVG drawings of two-dimensional partitions and matchings.

Axis 1 runs left to right and axis 0 top to bottom; one site is a unit
square.  Output depends only on the inputs, so equal inputs give equal bytes.
"""

from __future__ import annotations

import numpy as np

from .lattice import Configuration
from .matching import Matching
from .partitions import Partition

__all__ = ["render_svg", "PALETTE"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")


def _runs(mask: np.ndarray):
    """Start/stop pairs of the True runs of a 1-d boolean array."""
    m = np.r_[False, mask, False].astype(np.int8)
    edges = np.flatnonzero(np.diff(m))
    return edges[0::2], edges[1::2]


def _boundary_polylines(p: Partition) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    L = p.torus.L
    ids = p.ids.reshape(L, L)
    lines = []
    # horizontal edges between row i and i + 1
    for i in range(L - 1):
        for a, b in zip(*_runs(ids[i] != ids[i + 1])):
            lines.append(((int(a), i + 1), (int(b), i + 1)))
    # vertical edges between column j and j + 1
    for j in range(L - 1):
        for a, b in zip(*_runs(ids[:, j] != ids[:, j + 1])):
            lines.append(((j + 1, int(a)), (j + 1, int(b))))
    return lines


def render_svg(
    partition: Partition | None = None,
    matching: Matching | None = None,
    config: Configuration | None = None,
    *,
    scale: int = 4,
    title: str = "",
) -> str:
    """Cell boundaries as polylines, matched pairs as segments coloured by
    tag, optionally the site colours underneath."""
    torus = next((o.torus for o in (partition, matching, config) if o is not None), None)
    if torus is None:
        raise ValueError("nothing to render")
    if torus.d != 2:
        raise ValueError(f"rendering needs d = 2, got d = {torus.d}")
    L = torus.L
    W = L * scale
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{W}" viewBox="0 0 {L} {L}">',
    ]
    if title:
        out.append(f"<title>{title}</title>")
    if config is not None:
        out.append('<g id="sites" stroke="none">')
        lab = config.labels
        for i in range(L):
            for a, b in zip(*_runs(lab[i] == 1)):
                out.append(f'<rect x="{a}" y="{i}" width="{b - a}" height="1" fill="#c6dbef"/>')
            for a, b in zip(*_runs(lab[i] == 0)):
                out.append(f'<rect x="{a}" y="{i}" width="{b - a}" height="1" fill="#fdf1b8"/>')
        out.append("</g>")
    out.append(f'<rect id="window" x="0" y="0" width="{L}" height="{L}" fill="none" stroke="black" stroke-width="0.15"/>')
    if partition is not None:
        out.append('<g id="cells" fill="none" stroke="black" stroke-width="0.1">')
        for (x0, y0), (x1, y1) in _boundary_polylines(partition):
            out.append(f'<polyline points="{x0},{y0} {x1},{y1}"/>')
        out.append("</g>")
    if matching is not None:
        out.append('<g id="pairs" stroke-width="0.2" stroke-linecap="round">')
        pairs = matching.pairs()
        if pairs.size:
            a = torus.unflat(pairs[:, 0])
            disp = torus.displacement(pairs[:, 0], pairs[:, 1])
            for (r, c), (dr, dc), tag in zip(a, disp, pairs[:, 2]):
                col = PALETTE[int(tag) % len(PALETTE)]
                out.append(
                    f'<line x1="{c + 0.5}" y1="{r + 0.5}" x2="{c + dc + 0.5}" y2="{r + dr + 0.5}" stroke="{col}" data-tag="{int(tag)}"/>'
                )
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
