"""Dependency-free static SVG line charts for training records and MI traces."""

from pathlib import Path

import numpy as np

__all__ = ["line_chart_svg"]

PALETTE = ("#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d68910", "#555555")


def line_chart_svg(path, series, title="", xlabel="", ylabel="", width=480, height=320):
    """Write ``series`` (name -> (x, y)) as polylines on shared axes."""
    pad_l, pad_r, pad_t, pad_b = 50, 110, 30, 40
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def pt(x, y):
        return f"{pad_l + (x - x0) / (x1 - x0) * pw:.2f},{pad_t + (1 - (y - y0) / (y1 - y0)) * ph:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
        f'<text x="{pad_l}" y="{pad_t - 10}" font-size="12">{title}</text>',
        f'<text x="{pad_l + pw / 2:.0f}" y="{height - 8}" font-size="11" text-anchor="middle">{xlabel}</text>',
        f'<text x="12" y="{pad_t + ph / 2:.0f}" font-size="11" transform="rotate(-90 12 {pad_t + ph / 2:.0f})" '
        f'text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad_l - 4}" y="{pad_t + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
        f'<text x="{pad_l - 4}" y="{pad_t + ph}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad_l}" y="{pad_t + ph + 14}" font-size="10">{x0:.3g}</text>',
        f'<text x="{pad_l + pw}" y="{pad_t + ph + 14}" font-size="10" text-anchor="end">{x1:.3g}</text>',
    ]
    for i, (name, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        poly = " ".join(pt(a, b) for a, b in zip(np.asarray(x, float), np.asarray(y, float)))
        parts.append(f'<polyline points="{poly}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = pad_t + 14 * (i + 1)
        parts.append(f'<text x="{pad_l + pw + 8}" y="{ly}" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>\n")
    Path(path).write_text("\n".join(parts))
