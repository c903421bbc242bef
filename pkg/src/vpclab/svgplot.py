"""Dependency-free line plots: read a metric CSV, emit a deterministic SVG
with one polyline per model series."""

from __future__ import annotations

import csv
from pathlib import Path


class PlotError(ValueError):
    pass


WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 160, 30, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def read_series(csv_path: str | Path, metric: str) -> dict[str, list[tuple[float, float]]]:
    """Group CSV rows of one metric into per-model (x, y) series.

    The x value is the trailing number in the scenario label when present
    (e.g. ``asr_missing_25`` -> 25), otherwise the row index within the
    series.
    """
    path = Path(csv_path)
    if not path.exists():
        raise PlotError(f"no such CSV: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise PlotError(f"empty CSV: {path}")
    for col in ("scenario", "model", "metric", "value"):
        if col not in rows[0]:
            raise PlotError(f"missing column {col!r} in {path}")
    series: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        if row["metric"] != metric:
            continue
        pts = series.setdefault(row["model"], [])
        tail = row["scenario"].rsplit("_", 1)[-1]
        try:
            x = float(tail)
        except ValueError:
            x = float(len(pts))
        try:
            y = float(row["value"])
        except ValueError as exc:
            raise PlotError(f"non-numeric value {row['value']!r}") from exc
        pts.append((x, y))
    if not series:
        raise PlotError(f"no rows with metric {metric!r} in {path}")
    return series


def render_svg(
    series: dict[str, list[tuple[float, float]]],
    title: str,
    x_label: str,
    y_label: str,
) -> str:
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(x: float) -> float:
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R)

    def py(y: float) -> float:
        return HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    # axes
    x0, y0 = px(x_lo), py(y_lo)
    parts.append(f'<line x1="{x0:.1f}" y1="{py(y_hi):.1f}" x2="{x0:.1f}" '
                 f'y2="{y0:.1f}" stroke="black"/>')
    parts.append(f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{px(x_hi):.1f}" '
                 f'y2="{y0:.1f}" stroke="black"/>')
    for i in range(5):
        xv = x_lo + (x_hi - x_lo) * i / 4
        yv = y_lo + (y_hi - y_lo) * i / 4
        parts.append(f'<text x="{px(xv):.1f}" y="{HEIGHT - MARGIN_B + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{_fmt(xv)}</text>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{py(yv) + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{_fmt(yv)}</text>')
    parts.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 10}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">{x_label}</text>')
    parts.append(f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 16 {HEIGHT // 2})">{y_label}</text>')
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" '
                         f'fill="{color}"/>')
        ly = MARGIN_T + 16 * (i + 1)
        lx = WIDTH - MARGIN_R + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 26}" y="{ly}" font-family="sans-serif" '
                     f'font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plot(
    csv_path: str | Path,
    out_path: str | Path,
    metric: str = "cider",
    title: str | None = None,
    x_label: str = "scenario",
    y_label: str | None = None,
) -> None:
    series = read_series(csv_path, metric)
    svg = render_svg(series, title or metric, x_label, y_label or metric)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, encoding="utf-8")
