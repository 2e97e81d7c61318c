"""Minimal static SVG output for the peak diagnostics.

Hand-rolled vector output (axes, points, polylines) keeps the artifact
free of plotting dependencies and byte-deterministic for replay checks.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _limits(values: np.ndarray) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi <= lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Canvas:
    def __init__(self, x_lim, y_lim, title, x_label, y_label):
        self.x_lim, self.y_lim = x_lim, y_lim
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" '
            f'height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="black"/>',
            f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
            f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
            f'font-size="12">{x_label}</text>',
            f'<text x="16" y="{HEIGHT / 2:.1f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 16 {HEIGHT / 2:.1f})">{y_label}</text>',
        ]
        for frac in (0.0, 0.5, 1.0):
            xv = self.x_lim[0] + frac * (self.x_lim[1] - self.x_lim[0])
            yv = self.y_lim[0] + frac * (self.y_lim[1] - self.y_lim[0])
            self.parts.append(f'<text x="{self._x(xv):.1f}" y="{HEIGHT - MARGIN + 16}" '
                              f'text-anchor="middle" font-size="10">{xv:.3g}</text>')
            self.parts.append(f'<text x="{MARGIN - 6}" y="{self._y(yv):.1f}" '
                              f'text-anchor="end" font-size="10">{yv:.3g}</text>')

    def _x(self, v: float) -> float:
        lo, hi = self.x_lim
        return MARGIN + (v - lo) / (hi - lo) * (WIDTH - 2 * MARGIN)

    def _y(self, v: float) -> float:
        lo, hi = self.y_lim
        return HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2 * MARGIN)

    def line(self, x0, y0, x1, y1, color="black", dash=False):
        extra = ' stroke-dasharray="6,4"' if dash else ""
        self.parts.append(f'<line x1="{self._x(x0):.2f}" y1="{self._y(y0):.2f}" '
                          f'x2="{self._x(x1):.2f}" y2="{self._y(y1):.2f}" '
                          f'stroke="{color}"{extra}/>')

    def points(self, xs, ys, color):
        for x, y in zip(xs, ys):
            self.parts.append(f'<circle cx="{self._x(float(x)):.2f}" '
                              f'cy="{self._y(float(y)):.2f}" r="3" fill="{color}" '
                              f'fill-opacity="0.7"/>')

    def polyline(self, xs, ys, color):
        pts = " ".join(f"{self._x(float(x)):.2f},{self._y(float(y)):.2f}"
                       for x, y in zip(xs, ys))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                          f'stroke-width="1.5"/>')

    def legend(self, labels_colors):
        y = MARGIN + 14
        for label, color in labels_colors:
            self.parts.append(f'<rect x="{WIDTH - MARGIN - 130}" y="{y - 9}" width="12" '
                              f'height="9" fill="{color}"/>')
            self.parts.append(f'<text x="{WIDTH - MARGIN - 114}" y="{y}" '
                              f'font-size="11">{label}</text>')
            y += 16

    def save(self, path: Path):
        self.parts.append("</svg>")
        Path(path).write_text("\n".join(self.parts) + "\n")


def peak_scatter_svg(path: Path, gt_peaks, pred_peaks, title="Peak scatter") -> None:
    """Predicted vs ground-truth peaks with the identity line."""
    gt = np.asarray(gt_peaks, dtype=np.float64)
    pred = np.asarray(pred_peaks, dtype=np.float64)
    pool = np.concatenate([gt, pred]) if gt.size else np.array([0.0, 1.0])
    lim = _limits(pool)
    canvas = _Canvas(lim, lim, title, "ground-truth peak (m)", "predicted peak (m)")
    canvas.line(lim[0], lim[0], lim[1], lim[1], color="#888888", dash=True)
    canvas.points(gt, pred, PALETTE[0])
    canvas.save(path)


def density_svg(path: Path, grid, curves: dict[str, np.ndarray],
                title="Peak densities") -> None:
    """One polyline per labelled density sharing a common grid."""
    grid = np.asarray(grid, dtype=np.float64)
    stacked = np.concatenate([np.asarray(c) for c in curves.values()])
    canvas = _Canvas(_limits(grid), _limits(np.append(stacked, 0.0)), title,
                     "peak magnitude (m)", "density")
    legend = []
    for k, (label, curve) in enumerate(curves.items()):
        color = PALETTE[k % len(PALETTE)]
        canvas.polyline(grid, np.asarray(curve), color)
        legend.append((label, color))
    canvas.legend(legend)
    canvas.save(path)


def severity_svg(path: Path, rows: list[tuple[float, float, int]],
                 title="Peak RMSE by severity") -> None:
    """Smoothed per-bin RMSE against bin centre."""
    if rows:
        centers = np.array([r[0] for r in rows])
        rmse = np.array([r[1] for r in rows])
    else:
        centers, rmse = np.array([0.0, 1.0]), np.array([0.0, 0.0])
    canvas = _Canvas(_limits(centers), _limits(np.append(rmse, 0.0)), title,
                     "ground-truth peak magnitude (m)", "RMSE (m)")
    canvas.polyline(centers, rmse, PALETTE[1])
    canvas.points(centers, rmse, PALETTE[1])
    canvas.save(path)
