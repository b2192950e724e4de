"""SVG heatmap of a decision matrix: time across, space up."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

STOP_COLOR = "#d62728"
CONT_COLOR = "#2ca02c"


def _edges(g):
    mid = 0.5 * (g[1:] + g[:-1])
    return np.concatenate([[g[0]], mid, [g[-1]]])


def heatmap_svg(t_grid, x_grid, D, width=640, height=480, title=None):
    """SVG text colouring stopping (red) and continuation (green) cells.

    Each time column is drawn as runs of equal cells, so the file size grows
    with the number of region edges rather than with ``N * M``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    D = np.asarray(D).astype(bool)
    ml, mr, mt, mb = 60, 20, 30 if title else 15, 45
    pw, ph = width - ml - mr, height - mt - mb
    te, xe = _edges(t_grid), _edges(x_grid)
    t0, t1, x0, x1 = te[0], te[-1], xe[0], xe[-1]

    def px(t):
        return ml + (t - t0) / (t1 - t0) * pw

    def py(x):
        return mt + (x1 - x) / (x1 - x0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    parts.append('<g shape-rendering="crispEdges">')
    for i in range(len(t_grid)):
        col = D[i]
        change = np.flatnonzero(np.diff(col.astype(int))) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [len(col)]])
        xa, xb = px(te[i]), px(te[i + 1])
        for a, b in zip(starts, ends):
            ya, yb = py(xe[b]), py(xe[a])
            color = STOP_COLOR if col[a] else CONT_COLOR
            parts.append(
                f'<rect x="{xa:.2f}" y="{ya:.2f}" width="{max(xb - xa, 0.01):.2f}" '
                f'height="{max(yb - ya, 0.01):.2f}" fill="{color}"/>'
            )
    parts.append("</g>")
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for k in range(5):
        t = t0 + k * (t1 - t0) / 4
        x = x0 + k * (x1 - x0) / 4
        parts.append(f'<text x="{px(t):.1f}" y="{mt + ph + 16}" text-anchor="middle" font-size="11">{t:.2f}</text>')
        parts.append(f'<text x="{ml - 6}" y="{py(x) + 4:.1f}" text-anchor="end" font-size="11">{x:.2f}</text>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="13">t</text>')
    parts.append(
        f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {mt + ph / 2:.1f})">x</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_heatmap(path, t_grid, x_grid, D, title=None):
    with open(path, "w") as fh:
        fh.write(heatmap_svg(t_grid, x_grid, D, title=title))
