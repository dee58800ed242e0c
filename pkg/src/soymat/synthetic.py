"""Synthetic field trials with an analytically known greenness trajectory.

Each plot's canvas colour on day ``t`` is chosen so its Green Leaf Index
equals ``greenness_trajectory(m, t)``, a logistic decay centred on the plot's
maturity day ``m``. With red and blue fixed at 100, the green channel
``G = 100 (1 + g) / (1 - g)`` gives ``GLI = g`` exactly, so every prediction
made downstream has a closed-form oracle.
"""

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .ingest import GroundTruth, Orthomosaic, PlotBoundary, write_plot_boundaries

SOIL_RGB = (120, 100, 80)
RED_BLUE_LEVEL = 100.0
G_MIN, G_MAX = 50.0, 255.0
GLI_MIN = (G_MIN - RED_BLUE_LEVEL) / (G_MIN + RED_BLUE_LEVEL)
GLI_MAX = (G_MAX - RED_BLUE_LEVEL) / (G_MAX + RED_BLUE_LEVEL)
DEFAULT_THRESHOLD = 0.02


@dataclass(frozen=True)
class Trajectory:
    g_green: float = 0.25
    g_brown: float = -0.21
    s: float = 10.0

    @property
    def midpoint(self):
        return 0.5 * (self.g_green + self.g_brown)


@dataclass
class SynthConfig:
    environment_id: str = "env1"
    plot_rows: int = 10
    plot_cols: int = 20
    plot_px_w: int = 32
    plot_px_h: int = 128
    gutter_px: int = 8
    flight_days: tuple = (6, 13, 20, 27, 37)
    maturity_range: tuple = (10, 34)
    trajectory: Trajectory = field(default_factory=Trajectory)
    noise_sigma: float = 8.0
    seed: int = 0
    rotation_deg: float = 0.0
    canvas: tuple = None
    n_plots: int = None

    def __post_init__(self):
        self.flight_days = tuple(int(d) for d in self.flight_days)
        self.maturity_range = tuple(int(v) for v in self.maturity_range)
        if isinstance(self.trajectory, dict):
            self.trajectory = Trajectory(**self.trajectory)
        if self.canvas is not None:
            self.canvas = tuple(int(v) for v in self.canvas)
        if self.n_plots is None:
            self.n_plots = self.plot_rows * self.plot_cols

    def validate(self):
        tr = self.trajectory
        if self.n_plots != self.plot_rows * self.plot_cols:
            raise ValueError(f"n_plots={self.n_plots} != plot_rows*plot_cols={self.plot_rows * self.plot_cols}")
        if min(self.plot_rows, self.plot_cols, self.plot_px_w, self.plot_px_h) < 1 or self.gutter_px < 0:
            raise ValueError("grid and plot dimensions must be positive")
        if not tr.s > 0:
            raise ValueError("trajectory slope scale s must be positive")
        if not tr.g_brown < DEFAULT_THRESHOLD < tr.g_green:
            raise ValueError("trajectory must satisfy g_brown < 0.02 < g_green")
        days = self.flight_days
        if len(days) < 1 or any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError(f"flight_days must be strictly increasing, got {days}")
        if days[0] < 0:
            raise ValueError("flight days are offsets after Aug 31 and cannot be negative")
        lo, hi = self.maturity_range
        if lo > hi or lo < days[0] - 10 or hi > days[-1] + 10:
            raise ValueError(
                f"maturity_range {self.maturity_range} must lie within "
                f"[{days[0] - 10}, {days[-1] + 10}]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        cw, ch = self.required_canvas()
        if self.canvas is not None and (self.canvas[0] < cw or self.canvas[1] < ch):
            raise ValueError(f"plot grid needs a {cw}x{ch} canvas, requested {self.canvas[0]}x{self.canvas[1]}")
        if self.rotation_deg:
            bw, bh = _rotated_extent(self.plot_px_w, self.plot_px_h, self.rotation_deg)
            if bw > self.plot_px_w + self.gutter_px - 1 or bh > self.plot_px_h + self.gutter_px - 1:
                raise ValueError("rotated plots overlap their neighbours; widen gutter_px")
        return self

    def required_canvas(self):
        g = self.gutter_px
        return (self.plot_cols * (self.plot_px_w + g) + g,
                self.plot_rows * (self.plot_px_h + g) + g)

    def to_dict(self):
        d = asdict(self)
        d["flight_days"] = list(self.flight_days)
        d["maturity_range"] = list(self.maturity_range)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _rotated_extent(w, h, deg):
    a = math.radians(deg)
    ca, sa = abs(math.cos(a)), abs(math.sin(a))
    return w * ca + h * sa, w * sa + h * ca


def logistic(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def greenness_trajectory(m, t, traj=Trajectory()):
    """GLI of a plot maturing on day ``m``, observed on day ``t``."""
    if not traj.s > 0:
        raise ValueError("s must be positive")
    z = (np.asarray(m, dtype=np.float64) - np.asarray(t, dtype=np.float64)) / traj.s
    return traj.g_brown + (traj.g_green - traj.g_brown) * logistic(z)


def invert_trajectory(g, t, traj=Trajectory()):
    """Maturity day whose trajectory passes through ``g`` on day ``t``."""
    p = (np.asarray(g, dtype=np.float64) - traj.g_brown) / (traj.g_green - traj.g_brown)
    return t + traj.s * np.log(p / (1.0 - p))


def green_level(g):
    """Green channel giving GLI ``g`` with red = blue = 100, before rounding."""
    return RED_BLUE_LEVEL * (1.0 + g) / (1.0 - g)


def round_half_up(v):
    return np.floor(np.asarray(v, dtype=np.float64) + 0.5)


def plot_color(g):
    """Integer RGB for GLI ``g`` and whether ``g`` had to be clamped."""
    level = green_level(g)
    clamped = not (G_MIN <= level <= G_MAX)
    level = min(max(level, G_MIN), G_MAX)
    return np.array([RED_BLUE_LEVEL, round_half_up(level), RED_BLUE_LEVEL]), clamped


def render_plot(g, w, h, noise_sigma, rng):
    """Render a ``h x w`` RGB plot whose noiseless GLI is ``g``.

    Returns ``(image, clamped)``; ``clamped`` flags a ``g`` outside the
    renderable range, in which case the nearest renderable colour is used.
    """
    if w < 1 or h < 1:
        raise ValueError("plot size must be at least 1x1")
    color, clamped = plot_color(g)
    img = np.broadcast_to(color, (h, w, 3)).astype(np.float64)
    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(round_half_up(img), 0, 255).astype(np.uint8), clamped


def _plot_stream(seed, index, day):
    return np.random.default_rng(np.random.SeedSequence([seed, 1, index, day]))


def draw_maturity_days(cfg):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    lo, hi = cfg.maturity_range
    return rng.integers(lo, hi + 1, size=cfg.n_plots)


def plot_boundaries(cfg):
    """Boundaries of the plot grid, row-major, in canvas pixel coordinates."""
    out = []
    g, w, h = cfg.gutter_px, cfg.plot_px_w, cfg.plot_px_h
    a = math.radians(cfg.rotation_deg)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    for r in range(cfg.plot_rows):
        for c in range(cfg.plot_cols):
            x0, y0 = g + c * (w + g), g + r * (h + g)
            corners = np.array([[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]], dtype=np.float64)
            if cfg.rotation_deg:
                center = corners.mean(axis=0)
                corners = (corners - center) @ rot.T + center
            idx = r * cfg.plot_cols + c
            out.append(PlotBoundary(f"p{idx:04d}", cfg.environment_id, corners).normalized())
    return out


def _paint(canvas, boundary, g, noise_sigma, rng):
    corners = boundary.corners
    xmin, ymin = np.floor(corners.min(axis=0)).astype(int)
    xmax, ymax = np.ceil(corners.max(axis=0)).astype(int)
    w, h = xmax - xmin, ymax - ymin
    patch, clamped = render_plot(g, w, h, noise_sigma, rng)
    if boundary.is_axis_aligned():
        canvas[ymin:ymax, xmin:xmax] = patch
        return clamped
    ys, xs = np.mgrid[ymin:ymax, xmin:xmax] + 0.5
    mask = boundary.contains(xs, ys)
    canvas[ymin:ymax, xmin:xmax][mask] = patch[mask]
    return clamped


def generate_environment(cfg):
    """Render one orthomosaic per flight day.

    Returns ``(orthomosaics, boundaries, ground_truth)``. Output is a pure
    function of ``cfg`` (seed included).
    """
    cfg.validate()
    width, height = cfg.canvas or cfg.required_canvas()
    boundaries = plot_boundaries(cfg)
    maturity = draw_maturity_days(cfg)
    truths = [GroundTruth(b.plot_id, cfg.environment_id, int(m)) for b, m in zip(boundaries, maturity)]
    orthos = []
    for day in cfg.flight_days:
        soil_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, day]))
        canvas = np.broadcast_to(np.array(SOIL_RGB, dtype=np.float64), (height, width, 3))
        if cfg.noise_sigma > 0:
            canvas = canvas + soil_rng.normal(0.0, cfg.noise_sigma, size=canvas.shape)
        canvas = np.clip(round_half_up(canvas), 0, 255).astype(np.uint8)
        for idx, (b, m) in enumerate(zip(boundaries, maturity)):
            g = greenness_trajectory(m, day, cfg.trajectory)
            _paint(canvas, b, g, cfg.noise_sigma, _plot_stream(cfg.seed, idx, day))
        orthos.append(Orthomosaic(cfg.environment_id, int(day), canvas))
    return orthos, boundaries, truths


def write_environment(out_dir, orthos, boundaries, truths, append_truth=False):
    """Write ``<env>_<day>.png`` orthomosaics, boundaries JSON and ground-truth CSV."""
    out_dir = Path(out_dir)
    (out_dir / "orthomosaics").mkdir(parents=True, exist_ok=True)
    paths = []
    for o in orthos:
        p = out_dir / "orthomosaics" / f"{o.environment_id}_{o.flight_day}.png"
        Image.fromarray(o.image).save(p, optimize=False)
        paths.append(p)
    env = boundaries[0].environment_id if boundaries else "env"
    paths.append(write_plot_boundaries(out_dir / "boundaries" / f"{env}.json", boundaries))
    gt_path = out_dir / "ground_truth.csv"
    new = not (append_truth and gt_path.exists())
    with open(gt_path, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["plot_id", "environment_id", "rm_day"])
        for t in truths:
            w.writerow([t.plot_id, t.environment_id, t.rm_day])
    paths.append(gt_path)
    return paths


# Environments of the six field trials: plot counts and flight dates as days
# after Aug 31; maturity centred on each environment's reported median day.
TRIAL_ENVIRONMENTS = {
    "env1": {"n_plots": 874, "flight_days": (6, 13, 20, 27, 38), "median_rm": 20, "test_size": 117},
    "env2": {"n_plots": 796, "flight_days": (5, 14, 17, 25, 34), "median_rm": 24, "test_size": 112},
    "env3": {"n_plots": 1686, "flight_days": (7, 13, 20, 26, 33), "median_rm": 15, "test_size": 260},
    "env4": {"n_plots": 688, "flight_days": (6, 14, 21, 27, 37), "median_rm": 25, "test_size": 104},
    "env5": {"n_plots": 896, "flight_days": (6, 14, 18, 25, 34), "median_rm": 26, "test_size": 134},
    "env6": {"n_plots": 1410, "flight_days": (6, 13, 20, 27, 37), "median_rm": 27, "test_size": 226},
}


def _grid_for(n):
    """Most square rows x cols factorisation of ``n`` with rows <= cols."""
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def trials_preset(seed=0, scale=1.0, **overrides):
    """One SynthConfig per field-trial environment.

    ``scale`` shrinks plot counts for desk-size runs; ``scale=1`` reproduces the
    published counts (6350 plots in total).
    """
    cfgs = []
    for k, (env, spec) in enumerate(TRIAL_ENVIRONMENTS.items()):
        n = max(10, int(round(spec["n_plots"] * scale)))
        rows, cols = _grid_for(n)
        med = spec["median_rm"]
        days = spec["flight_days"]
        lo = max(med - 8, days[0] - 10)
        hi = min(med + 8, days[-1] + 10)
        cfgs.append(SynthConfig(environment_id=env, plot_rows=rows, plot_cols=cols,
                                flight_days=days, maturity_range=(lo, hi),
                                seed=seed * 1000 + k + 1, **overrides))
    return cfgs


def load_config(path):
    """Read a JSON config: either one SynthConfig object or ``{"environments": [...]}``.

    ``{"preset": "trials", "scale": s}`` selects :func:`trials_preset`.
    """
    data = json.loads(Path(path).read_text())
    return configs_from_dict(data)


def configs_from_dict(data, seed=None):
    if "preset" in data:
        if data["preset"] != "trials":
            raise ValueError(f"unknown preset {data['preset']!r}")
        extra = {k: v for k, v in data.items() if k not in ("preset", "scale", "seed")}
        s = data.get("seed", 0) if seed is None else seed
        return trials_preset(seed=s, scale=data.get("scale", 1.0), **extra)
    envs = data.get("environments", [data])
    cfgs = [SynthConfig.from_dict(e) for e in envs]
    if seed is not None:
        for k, c in enumerate(cfgs):
            c.seed = seed * 1000 + k + 1
    return cfgs
