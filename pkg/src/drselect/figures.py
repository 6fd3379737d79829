"""Plot-ready SVG output, generated directly (no plotting dependency).

Line charts with interval bands, the similarity heatmap in dendrogram leaf
order with cluster borders, and the diversity-elbow chart.  All geometry is
formatted with fixed precision so reruns produce byte-identical files.
"""
from __future__ import annotations

import numpy as np

_WIDTH, _HEIGHT = 720, 460
_MARGIN = {"left": 70, "right": 160, "top": 40, "bottom": 50}

STRATEGY_COLORS = {
    "random": "#888888",
    "class_based": "#4477aa",
    "cluster_based": "#cc3311",
}

CATEGORY_COLORS = {
    "local": "#f6c6d9",
    "cluster_level": "#c9e7c5",
    "global": "#bcd9f0",
}


def _f(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_chart_svg(
    title: str,
    xlabel: str,
    ylabel: str,
    series: list[dict],
    vline: float | None = None,
    vline_label: str = "",
) -> str:
    """Render line series (optionally with `low`/`high` interval bands).

    Each series dict: {label, color, points: [(x, y), ...],
    bands: [(x, lo, hi), ...] (optional)}.
    """
    xs = [p[0] for s in series for p in s["points"]]
    ys = [p[1] for s in series for p in s["points"]]
    for s in series:
        for _, lo, hi in s.get("bands", ()):
            ys.extend([lo, hi])
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    pad = 0.05 * (y_hi - y_lo) or 0.05
    y_lo, y_hi = y_lo - pad, y_hi + pad

    px0, px1 = _MARGIN["left"], _WIDTH - _MARGIN["right"]
    py0, py1 = _HEIGHT - _MARGIN["bottom"], _MARGIN["top"]

    def sx(x):
        return px0 + (x - x_lo) / (x_hi - x_lo) * (px1 - px0)

    def sy(y):
        return py0 + (y - y_lo) / (y_hi - y_lo) * (py1 - py0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH // 2}" y="22" text-anchor="middle" font-size="15">{_esc(title)}</text>',
    ]
    # axes + ticks
    parts.append(
        f'<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" stroke="black"/>'
        f'<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" stroke="black"/>'
    )
    for tx in _ticks(x_lo, x_hi):
        parts.append(
            f'<line x1="{_f(sx(tx))}" y1="{py0}" x2="{_f(sx(tx))}" y2="{py0 + 4}" stroke="black"/>'
            f'<text x="{_f(sx(tx))}" y="{py0 + 18}" text-anchor="middle" font-size="11">{tx:g}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        parts.append(
            f'<line x1="{px0 - 4}" y1="{_f(sy(ty))}" x2="{px0}" y2="{_f(sy(ty))}" stroke="black"/>'
            f'<text x="{px0 - 8}" y="{_f(sy(ty) + 4)}" text-anchor="end" font-size="11">{ty:.3g}</text>'
        )
    parts.append(
        f'<text x="{(px0 + px1) // 2}" y="{_HEIGHT - 12}" text-anchor="middle" '
        f'font-size="12">{_esc(xlabel)}</text>'
        f'<text x="18" y="{(py0 + py1) // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {(py0 + py1) // 2})">{_esc(ylabel)}</text>'
    )
    if vline is not None:
        parts.append(
            f'<line x1="{_f(sx(vline))}" y1="{py0}" x2="{_f(sx(vline))}" y2="{py1}" '
            f'stroke="#cc3311" stroke-dasharray="5,4"/>'
        )
        if vline_label:
            parts.append(
                f'<text x="{_f(sx(vline) + 5)}" y="{py1 + 12}" font-size="11" '
                f'fill="#cc3311">{_esc(vline_label)}</text>'
            )
    for s in series:
        bands = s.get("bands", ())
        if bands:
            upper = [f"{_f(sx(x))},{_f(sy(hi))}" for x, _lo, hi in bands]
            lower = [f"{_f(sx(x))},{_f(sy(lo))}" for x, lo, _hi in reversed(bands)]
            parts.append(
                f'<polygon points="{" ".join(upper + lower)}" fill="{s["color"]}" '
                f'fill-opacity="0.18" stroke="none"/>'
            )
        pts = " ".join(f"{_f(sx(x))},{_f(sy(y))}" for x, y in s["points"])
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{s["color"]}" stroke-width="2"/>'
        )
        for x, y in s["points"]:
            parts.append(
                f'<circle cx="{_f(sx(x))}" cy="{_f(sy(y))}" r="3" fill="{s["color"]}"/>'
            )
    # legend
    ly = _MARGIN["top"] + 10
    for s in series:
        parts.append(
            f'<line x1="{px1 + 12}" y1="{ly}" x2="{px1 + 34}" y2="{ly}" '
            f'stroke="{s["color"]}" stroke-width="2"/>'
            f'<text x="{px1 + 40}" y="{ly + 4}" font-size="11">{_esc(s["label"])}</text>'
        )
        ly += 18
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _diverging_color(v: float) -> str:
    """Map [-1, 1] to blue-white-red."""
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        r, g, b = 255, round(255 * (1 - v * 0.75)), round(255 * (1 - v))
    else:
        r, g, b = round(255 * (1 + v)), round(255 * (1 + v * 0.75)), 255
    return f"rgb({int(r)},{int(g)},{int(b)})"


def heatmap_svg(
    title: str,
    ids_ordered: list[str],
    values_ordered: np.ndarray,
    categories: dict[str, str] | None = None,
    cluster_of: dict[str, int] | None = None,
) -> str:
    """Similarity heatmap in dendrogram leaf order.

    Labels are tinted by design category; contiguous runs of cells belonging
    to the same retained cluster get a black border.
    """
    m = len(ids_ordered)
    cell = max(10, min(26, 440 // max(m, 1)))
    label_w = 190
    top = 56
    width = label_w + m * cell + 40
    height = top + m * cell + label_w
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="24" text-anchor="middle" font-size="15">{_esc(title)}</text>',
    ]
    for i in range(m):
        for j in range(m):
            x = label_w + j * cell
            y = top + i * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_diverging_color(float(values_ordered[i, j]))}"/>'
            )
    font = max(8, min(11, cell - 4))
    for i, mid in enumerate(ids_ordered):
        y = top + i * cell
        fill = CATEGORY_COLORS.get((categories or {}).get(mid, ""), "#eeeeee")
        parts.append(
            f'<rect x="0" y="{y}" width="{label_w - 6}" height="{cell}" fill="{fill}"/>'
            f'<text x="{label_w - 10}" y="{y + cell - max(2, (cell - font) // 2)}" '
            f'text-anchor="end" font-size="{font}">{_esc(mid)}</text>'
        )
        x = label_w + i * cell
        ty = top + m * cell + 4
        parts.append(
            f'<rect x="{x}" y="{ty}" width="{cell}" height="{label_w - 6}" fill="{fill}"/>'
            f'<text x="{x + cell // 2}" y="{ty + 6}" text-anchor="end" font-size="{font}" '
            f'transform="rotate(-90 {x + cell // 2} {ty + 6})" '
            f'dominant-baseline="middle">{_esc(mid)}</text>'
        )
    if cluster_of:
        # leaf order keeps each cluster contiguous; outline each run
        start = 0
        while start < m:
            cid = cluster_of.get(ids_ordered[start])
            end = start
            while end + 1 < m and cluster_of.get(ids_ordered[end + 1]) == cid and cid is not None:
                end += 1
            if cid is not None:
                x = label_w + start * cell
                y = top + start * cell
                size = (end - start + 1) * cell
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{size}" height="{size}" '
                    f'fill="none" stroke="black" stroke-width="2.5"/>'
                )
            start = end + 1
    # color scale legend
    lx = label_w + m * cell + 8
    for idx, v in enumerate((1.0, 0.5, 0.0, -0.5, -1.0)):
        parts.append(
            f'<rect x="{lx}" y="{top + idx * 22}" width="14" height="14" '
            f'fill="{_diverging_color(v)}" stroke="#999"/>'
            f'<text x="{lx + 18}" y="{top + idx * 22 + 11}" font-size="10">{v:+.1f}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
