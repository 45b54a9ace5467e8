"""Hand-rolled minimal SVG output: polyline charts and rect heatmaps.

CSV artifacts are always the source of truth; these exist so runs can be
eyeballed without pulling in a plotting stack.
"""

from __future__ import annotations

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(vals, lo, hi, out_lo, out_hi):
    vals = np.asarray(vals, dtype=np.float64)
    span = hi - lo if hi > lo else 1.0
    return out_lo + (vals - lo) / span * (out_hi - out_lo)


def line_chart(path, x, series: dict, title: str = "", log_y: bool = False,
               width: int = 720, height: int = 420):
    """Polyline chart of one or more named series over shared x values."""
    x = np.asarray(x, dtype=np.float64)
    margin = 50
    ys = np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()])
    ys = ys[np.isfinite(ys)]
    if log_y:
        ys = np.log10(ys[ys > 0]) if np.any(ys > 0) else np.array([0.0])
    y_lo, y_hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
        f'height="{height - 2 * margin}" fill="none" stroke="#999"/>',
    ]
    for i, (name, vals) in enumerate(series.items()):
        vals = np.asarray(vals, dtype=np.float64)
        if log_y:
            vals = np.where(vals > 0, np.log10(np.maximum(vals, 1e-300)), np.nan)
        px = _scale(x, float(x.min()), float(x.max()), margin, width - margin)
        py = _scale(vals, y_lo, y_hi, height - margin, margin)
        ok = np.isfinite(py)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px[ok], py[ok]))
        color = _COLORS[i % len(_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{margin + 8}" y="{margin + 16 + 16 * i}" '
                     f'font-size="12" fill="{color}">{name}</text>')
    parts.append(f'<text x="{margin}" y="{height - margin + 28}" font-size="11">'
                 f'{x.min():g}</text>')
    parts.append(f'<text x="{width - margin}" y="{height - margin + 28}" font-size="11" '
                 f'text-anchor="end">{x.max():g}</text>')
    lo_txt = f"{10 ** y_lo:.3g}" if log_y else f"{y_lo:.3g}"
    hi_txt = f"{10 ** y_hi:.3g}" if log_y else f"{y_hi:.3g}"
    parts.append(f'<text x="{margin - 4}" y="{height - margin}" font-size="11" '
                 f'text-anchor="end">{lo_txt}</text>')
    parts.append(f'<text x="{margin - 4}" y="{margin + 10}" font-size="11" '
                 f'text-anchor="end">{hi_txt}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def heatmap(path, matrix, title: str = "", clip=(0.0, 1.0),
            width: int = 720, height: int = 420):
    """Row-major heatmap (first row at the top), values clipped then mapped
    dark-blue -> yellow."""
    m = np.asarray(matrix, dtype=np.float64)
    m = np.clip(m, clip[0], clip[1])
    span = clip[1] - clip[0] if clip[1] > clip[0] else 1.0
    norm = (m - clip[0]) / span
    rows, cols = m.shape
    margin = 40
    cw = (width - 2 * margin) / cols
    ch = (height - 2 * margin) / rows
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for r in range(rows):
        for c in range(cols):
            v = norm[r, c]
            red = int(40 + 215 * v)
            green = int(40 + 180 * v)
            blue = int(120 * (1 - v) + 40)
            parts.append(
                f'<rect x="{margin + c * cw:.2f}" y="{margin + r * ch:.2f}" '
                f'width="{cw + 0.5:.2f}" height="{ch + 0.5:.2f}" '
                f'fill="rgb({red},{green},{blue})"/>'
            )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
