"""File emitters: SVG scatter plots and the threshold-grid table."""

import csv
import math
from xml.sax.saxutils import escape

import numpy as np

BEST_MARK = "*"


def _ticks(lo, hi, n=5):
    step = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(step)) if step > 0 else 1
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= step), default=step)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def scatter_svg(path, predicted, truth, title="", size=360, margin=48):
    """Predicted against ground-truth days, one ``<circle>`` per plot, and the x=y line."""
    pred = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(truth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("predicted and truth differ in length")
    both = np.concatenate([pred, gt])
    both = both[np.isfinite(both)]
    lo, hi = (float(both.min()), float(both.max())) if both.size else (0.0, 1.0)
    pad = max(1.0, 0.05 * (hi - lo))
    lo, hi = math.floor(lo - pad), math.ceil(hi + pad)
    span = size - 2 * margin

    def sx(v):
        return margin + (v - lo) / (hi - lo) * span

    def sy(v):
        return size - margin - (v - lo) / (hi - lo) * span

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
           f'<text x="{size / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="#888"/>']
    for t in _ticks(lo, hi):
        out.append(f'<text x="{sx(t):.1f}" y="{size - margin + 14}" text-anchor="middle" '
                   f'font-size="10">{t:g}</text>')
        out.append(f'<text x="{margin - 4}" y="{sy(t) + 3:.1f}" text-anchor="end" font-size="10">{t:g}</text>')
    out.append(f'<text x="{size / 2:.1f}" y="{size - 10}" text-anchor="middle" font-size="11">'
               f'ground truth (days after Aug 31)</text>')
    out.append(f'<text x="14" y="{size / 2:.1f}" text-anchor="middle" font-size="11" '
               f'transform="rotate(-90 14 {size / 2:.1f})">predicted</text>')
    out.append(f'<line class="identity" x1="{sx(lo):.2f}" y1="{sy(lo):.2f}" x2="{sx(hi):.2f}" '
               f'y2="{sy(hi):.2f}" stroke="black" stroke-width="1"/>')
    for p, g in zip(pred, gt):
        out.append(f'<circle cx="{sx(g):.2f}" cy="{sy(p):.2f}" r="2.5" fill="#2a7" '
                   f'fill-opacity="0.6"/>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path


def grid_table_csv(path, grid):
    """Threshold grid in the appendix layout: one row per (environment, metric).

    The best cell of each row carries a trailing ``*``.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["environment", "metric"] + [f"{t:.2f}" for t in grid.thresholds])
        for env, metric, vals, best in grid.rows():
            cells = ["nan" if math.isnan(v) else f"{v:.3f}" for v in vals]
            cells[best] += BEST_MARK
            w.writerow([env, metric] + cells)
    return path


def read_grid_table(path):
    """Parse a grid CSV back into ``{(env, metric): (values, marked_indices)}``."""
    out = {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:
        vals, marked = [], []
        for k, cell in enumerate(row[2:]):
            if cell.endswith(BEST_MARK):
                marked.append(k)
                cell = cell[:-1]
            vals.append(float(cell))
        out[(row[0], row[1])] = (vals, marked)
    return out
