"""Plot extraction: boundaries, rectified crops, fixed-size snips and date-ordered series.

Images are ``uint8`` arrays of shape ``(rows, cols, 3)``. A snip is
``(256, 64, 3)``: the plot's long axis runs down the rows.
"""

import csv
import datetime as dt
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

SNIP_LEN = 256
SNIP_W = 64
EDGE_TOLERANCE_PX = 2.0
SEASON_START = (8, 31)
SEASON_END = (11, 30)


@dataclass
class Orthomosaic:
    environment_id: str
    flight_day: int
    image: np.ndarray

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3 or min(self.image.shape[:2]) < 1:
            raise ValueError(f"orthomosaic must be an RGB raster, got shape {self.image.shape}")


@dataclass
class GroundTruth:
    plot_id: str
    environment_id: str
    rm_day: int


@dataclass
class PlotBoundary:
    """Oriented rectangle in pixel coordinates; ``corners`` is (4, 2) as (x, y).

    Pixel ``(row i, col j)`` covers ``[j, j+1) x [i, i+1)``, so its centre is
    at ``(j + 0.5, i + 0.5)``.
    """

    plot_id: str
    environment_id: str
    corners: np.ndarray

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=np.float64)
        if self.corners.shape != (4, 2) or not np.all(np.isfinite(self.corners)):
            raise ValueError(f"plot {self.plot_id}: corners must be four finite (x, y) points")
        if not _is_convex(self.corners):
            raise ValueError(f"plot {self.plot_id}: corners do not form a non-degenerate convex quadrilateral")

    @property
    def signed_area(self):
        x, y = self.corners[:, 0], self.corners[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @property
    def area(self):
        return abs(self.signed_area)

    def normalized(self):
        """Copy with counter-clockwise winding (positive shoelace area in x/y)."""
        if self.signed_area < 0:
            return replace(self, corners=self.corners[::-1].copy())
        return self

    def is_axis_aligned(self):
        c = self.corners
        xs, ys = np.unique(c[:, 0]), np.unique(c[:, 1])
        return len(xs) == 2 and len(ys) == 2 and np.all(c == np.round(c))

    def axes(self):
        """``(origin, u_len, u_wid, length, width)`` of the rectangle.

        ``u_len`` points along the long side with a positive y (or, for a
        horizontal long side, positive x) component; ``u_wid`` is the short
        side chosen with a positive x (or y) component.
        """
        c = self.corners
        e1 = 0.5 * ((c[1] - c[0]) + (c[2] - c[3]))
        e2 = 0.5 * ((c[2] - c[1]) + (c[3] - c[0]))
        n1, n2 = np.hypot(*e1), np.hypot(*e2)
        (el, nl), (ew, nw) = ((e1, n1), (e2, n2)) if n1 >= n2 else ((e2, n2), (e1, n1))
        u_len = el / nl
        if u_len[1] < 0 or (u_len[1] == 0 and u_len[0] < 0):
            u_len = -u_len
        u_wid = ew / nw
        if u_wid[0] < 0 or (u_wid[0] == 0 and u_wid[1] < 0):
            u_wid = -u_wid
        center = c.mean(axis=0)
        origin = center - 0.5 * nl * u_len - 0.5 * nw * u_wid
        return origin, u_len, u_wid, nl, nw

    def contains(self, xs, ys):
        origin, ul, uw, nl, nw = self.axes()
        dx, dy = xs - origin[0], ys - origin[1]
        a = dx * ul[0] + dy * ul[1]
        b = dx * uw[0] + dy * uw[1]
        return (a >= 0) & (a < nl) & (b >= 0) & (b < nw)

    def to_json(self):
        return {"plot_id": self.plot_id, "environment_id": self.environment_id,
                "corners": [[float(x), float(y)] for x, y in self.corners]}


def _is_convex(c):
    d = np.roll(c, -1, axis=0) - c
    cross = d[:, 0] * np.roll(d[:, 1], -1) - d[:, 1] * np.roll(d[:, 0], -1)
    scale = max(float(np.abs(d).max()), 1e-300) ** 2
    return bool(np.all(cross > 1e-12 * scale) or np.all(cross < -1e-12 * scale))


@dataclass
class PlotSnip:
    plot_id: str
    flight_day: int
    image: np.ndarray
    environment_id: str = ""

    def __post_init__(self):
        if self.image.shape != (SNIP_LEN, SNIP_W, 3):
            raise ValueError(f"snip {self.plot_id}@{self.flight_day} has shape {self.image.shape}, "
                             f"expected {(SNIP_LEN, SNIP_W, 3)}")


@dataclass
class PlotSeries:
    plot_id: str
    environment_id: str
    snips: list = field(default_factory=list)
    rm_day: int = None

    def __post_init__(self):
        days = self.days
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError(f"series {self.environment_id}/{self.plot_id}: flight days not strictly increasing {days}")

    @property
    def days(self):
        return [s.flight_day for s in self.snips]

    @property
    def key(self):
        return (self.environment_id, self.plot_id)

    def stack(self):
        return np.stack([s.image for s in self.snips])


def parse_plot_boundaries(path):
    """Read a JSON array of ``{"plot_id", "environment_id", "corners"}`` records."""
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(records, list):
        raise ValueError(f"{path}: expected a JSON array of boundary records")
    out, seen = [], set()
    for k, rec in enumerate(records):
        try:
            pid, env, corners = str(rec["plot_id"]), str(rec["environment_id"]), rec["corners"]
            b = PlotBoundary(pid, env, corners)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: malformed boundary record {k}: {exc!r}") from exc
        except ValueError as exc:
            raise ValueError(f"{path}: record {k}: {exc}") from exc
        if (env, pid) in seen:
            raise ValueError(f"{path}: record {k}: duplicate plot_id {pid!r} in environment {env!r}")
        seen.add((env, pid))
        out.append(b.normalized())
    return out


def write_plot_boundaries(path, boundaries):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([b.to_json() for b in boundaries], indent=1) + "\n")
    return path


def read_ground_truth(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["plot_id", "environment_id", "rm_day"]:
            raise ValueError(f"{path}: expected header plot_id,environment_id,rm_day, got {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            try:
                out.append(GroundTruth(row["plot_id"], row["environment_id"], int(row["rm_day"])))
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: bad rm_day {row['rm_day']!r}") from exc
    keys = [(g.environment_id, g.plot_id) for g in out]
    if len(set(keys)) != len(keys):
        raise ValueError(f"{path}: duplicate (plot_id, environment_id) rows")
    return out


_ORTHO_NAME = re.compile(r"^(?P<env>.+)_(?P<day>-?\d+)\.png$")


def load_orthomosaics(directory):
    """Load every ``<env>_<day>.png`` in ``directory``, ordered by (env, day)."""
    out = []
    for p in sorted(Path(directory).glob("*.png")):
        m = _ORTHO_NAME.match(p.name)
        if not m:
            continue
        img = np.asarray(Image.open(p).convert("RGB"))
        out.append(Orthomosaic(m["env"], int(m["day"]), img))
    out.sort(key=lambda o: (o.environment_id, o.flight_day))
    return out


def bilinear_sample(image, xs, ys):
    """Sample ``image`` at continuous pixel-index coordinates, clamping at the edges."""
    h, w = image.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    img = image.astype(np.float64)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _to_uint8(v):
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def extract_plot(ortho, boundary):
    """Axis-rectified crop of one plot with its long side running down the rows.

    The crop keeps the rectangle's own pixel dimensions. Pixel centres of the
    output map onto the rectangle and are sampled bilinearly, so an
    axis-aligned boundary on whole pixels reproduces a plain crop exactly.
    """
    image = ortho.image if isinstance(ortho, Orthomosaic) else ortho
    h, w = image.shape[:2]
    origin, ul, uw, nl, nw = boundary.axes()
    rows, cols = max(1, int(round(nl))), max(1, int(round(nw)))
    a = (np.arange(rows) + 0.5) * (nl / rows)
    b = (np.arange(cols) + 0.5) * (nw / cols)
    px = origin[0] + a[:, None] * ul[0] + b[None, :] * uw[0]
    py = origin[1] + a[:, None] * ul[1] + b[None, :] * uw[1]
    c = boundary.corners
    if boundary.is_axis_aligned() and c.min() >= 0 and c[:, 0].max() <= w and c[:, 1].max() <= h:
        x0, y0 = c.min(axis=0).astype(int)
        x1, y1 = c.max(axis=0).astype(int)
        crop = image[y0:y1, x0:x1].copy()
        return crop if ul[1] > 0 else crop.transpose(1, 0, 2).copy()
    tol = EDGE_TOLERANCE_PX
    if (c[:, 0].min() < -tol or c[:, 1].min() < -tol
            or c[:, 0].max() > w + tol or c[:, 1].max() > h + tol):
        inside = (px >= 0) & (px <= w) & (py >= 0) & (py <= h)
        raise ValueError(f"plot {boundary.plot_id} lies outside the {w}x{h} raster "
                         f"(overlap fraction {inside.mean():.3f})")
    return _to_uint8(bilinear_sample(image, px - 0.5, py - 0.5))


def _interp_matrix(n_out, n_in):
    """Row-stochastic bilinear weights mapping ``n_in`` samples onto ``n_out``."""
    pos = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def resize(image, target_len=SNIP_LEN, target_w=SNIP_W):
    """Bilinear resize to ``(target_len, target_w, channels)`` with half-pixel alignment."""
    h, w = image.shape[:2]
    if (h, w) == (target_len, target_w):
        return image.copy()
    ry = _interp_matrix(target_len, h)
    rx = _interp_matrix(target_w, w)
    img = np.asarray(image, dtype=np.float64)
    out = np.einsum("ij,jkc->ikc", ry, img)
    out = np.einsum("lk,ikc->ilc", rx, out)
    return _to_uint8(out)


def make_snip(ortho, boundary):
    return PlotSnip(boundary.plot_id, ortho.flight_day, resize(extract_plot(ortho, boundary)),
                    ortho.environment_id)


def extract_snips(orthos, boundaries):
    """Snips for every boundary on every orthomosaic of the same environment."""
    by_env = defaultdict(list)
    for b in boundaries:
        by_env[b.environment_id].append(b)
    return [make_snip(o, b) for o in orthos for b in by_env.get(o.environment_id, [])]


def assemble_series(snips, gt=()):
    """Group snips by (environment, plot), sorted by flight day, joined to ground truth."""
    truth = {(g.environment_id, g.plot_id): g.rm_day for g in gt}
    groups = defaultdict(dict)
    for s in snips:
        g = groups[(s.environment_id, s.plot_id)]
        if s.flight_day in g:
            raise ValueError(f"duplicate snip for plot {s.plot_id!r} in {s.environment_id!r} on day {s.flight_day}")
        g[s.flight_day] = s
    out = []
    for key in sorted(groups):
        days = sorted(groups[key])
        out.append(PlotSeries(key[1], key[0], [groups[key][d] for d in days], truth.get(key)))
    return out


SCHEDULES = {"weekly": 5, "biweekly": 3}


def select_flights(series, schedule):
    """Pick the weekly five flights, or first/middle/last of them for bi-weekly.

    Longer series are thinned to five evenly spaced flights first.
    """
    if schedule not in SCHEDULES:
        raise ValueError(f"unknown schedule {schedule!r}; use weekly or biweekly")
    need = SCHEDULES[schedule]
    n = len(series.snips)
    if n < need:
        raise ValueError(f"plot {series.plot_id!r} has {n} flights {series.days}; "
                         f"{schedule} needs {need}")
    if n <= 5:
        weekly = series.snips
    else:
        weekly = [series.snips[int(i)] for i in np.linspace(0, n - 1, 5).round()]
    chosen = weekly if schedule == "weekly" else [weekly[0], weekly[len(weekly) // 2], weekly[-1]]
    return replace(series, snips=list(chosen))


def _season_bounds(year):
    return dt.date(year, *SEASON_START), dt.date(year, *SEASON_END)


def rm_day_encode(date):
    """Relative-maturity day: calendar days after Aug 31 of the date's year."""
    start, end = _season_bounds(date.year)
    if not start <= date <= end:
        raise ValueError(f"{date.isoformat()} is outside the Aug 31 - Nov 30 season")
    return (date - start).days


def rm_day_decode(n, year=2019):
    start, end = _season_bounds(year)
    n = int(n)
    if not 0 <= n <= (end - start).days:
        raise ValueError(f"relative-maturity day {n} is outside the Aug 31 - Nov 30 season")
    return start + dt.timedelta(days=n)
