"""GLI + robust lowess threshold baseline.

Per plot: mean-channel Green Leaf Index for every flight, lowess smoothing of
GLI against flight day, linear interpolation onto whole days, and the day
whose smoothed GLI is closest to a greenness threshold.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import regression_metrics

DEFAULT_THRESHOLD = 0.02
DEFAULT_FRAC = 0.67
DEFAULT_ROBUST_ITERS = 3
GRID_THRESHOLDS = tuple(round(0.01 * k, 2) for k in range(1, 10))


def gli(image, return_flag=False):
    """Green Leaf Index ``(2G - R - B) / (2G + R + B)`` of the channel means.

    An all-black image has a zero denominator; its GLI is reported as 0 and,
    with ``return_flag``, flagged.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValueError("gli of an empty image")
    r, g, b = img.reshape(-1, img.shape[-1])[:, :3].mean(axis=0)
    den = 2.0 * g + r + b
    flagged = den == 0
    value = 0.0 if flagged else float((2.0 * g - r - b) / den)
    return (value, bool(flagged)) if return_flag else value


@dataclass
class GliSeries:
    plot_id: str
    days: np.ndarray
    values: np.ndarray
    environment_id: str = ""

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(np.diff(self.days) <= 0):
            raise ValueError(f"plot {self.plot_id}: days must be strictly increasing")

    @classmethod
    def from_series(cls, series):
        return cls(series.plot_id, series.days, [gli(s.image) for s in series.snips],
                   series.environment_id)


def _tricube(u):
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u ** 3) ** 3


def _bisquare(u):
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u ** 2) ** 2


def window_size(n, frac):
    return min(n, max(2, math.ceil(frac * n - 1e-9)))


def lowess(xs, ys, frac=DEFAULT_FRAC, robust_iters=DEFAULT_ROBUST_ITERS):
    """Robust locally weighted linear regression evaluated at ``xs``.

    Each point is fitted from its ``ceil(frac * n)`` nearest neighbours with
    tricube weights scaled by the distance to the farthest of them; then
    ``robust_iters`` rounds reweight residuals with the bisquare function at
    six median absolute residuals. A window whose weighted x-spread vanishes
    falls back to the weighted mean.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    n = len(x)
    if len(y) != n:
        raise ValueError("xs and ys differ in length")
    if n < 2 or len(np.unique(x)) < 2:
        raise ValueError("lowess needs at least two distinct x values")
    if not 0 < frac <= 1:
        raise ValueError("frac must be in (0, 1]")
    k = window_size(n, frac)
    dist = np.abs(x[None, :] - x[:, None])
    h = np.sort(dist, axis=1)[:, k - 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.where(h[:, None] > 0, _tricube(dist / h[:, None]), (dist == 0).astype(float))
    robust = np.ones(n)
    fit = np.empty(n)
    for it in range(robust_iters + 1):
        w = base * robust[None, :]
        # windows emptied by robustness weights revert to distance weights alone
        empty = w.sum(axis=1) <= 0
        w[empty] = base[empty]
        s0 = w.sum(axis=1)
        xm = (w @ x) / s0
        ym = (w @ y) / s0
        dx = x[None, :] - xm[:, None]
        sxx = np.einsum("ij,ij->i", w, dx * dx)
        sxy = np.einsum("ij,ij->i", w, dx * (y[None, :] - ym[:, None]))
        spread = sxx > 1e-12 * np.maximum(np.einsum("ij,ij->i", w, x[None, :] ** 2), 1e-300)
        slope = np.where(spread, sxy / np.where(spread, sxx, 1.0), 0.0)
        fit = ym + slope * (x - xm)
        if it == robust_iters:
            break
        resid = y - fit
        scale = np.median(np.abs(resid))
        if scale <= 1e-12 * max(np.mean(np.abs(y)), 1e-300):
            break
        robust = _bisquare(resid / (6.0 * scale))
    return fit


def interpolate_daily(days, values):
    """Piecewise-linear values on every whole day from the first to the last flight."""
    days = np.asarray(days, dtype=np.float64)
    if len(days) < 2:
        raise ValueError("need at least two flight days to interpolate")
    grid = np.arange(int(days[0]), int(days[-1]) + 1)
    return grid, np.interp(grid, days, np.asarray(values, dtype=np.float64))


@dataclass
class LoessFit:
    source: GliSeries
    frac: float
    robust_iters: int
    smoothed: np.ndarray
    grid: np.ndarray
    fitted: np.ndarray

    @classmethod
    def fit(cls, source, frac=DEFAULT_FRAC, robust_iters=DEFAULT_ROBUST_ITERS):
        sm = lowess(source.days, source.values, frac, robust_iters)
        grid, daily = interpolate_daily(source.days, sm)
        return cls(source, frac, robust_iters, sm, grid, daily)


@dataclass
class LoessPrediction:
    plot_id: str
    environment_id: str
    rm_day: int
    censored: bool
    fit: LoessFit = field(repr=False, default=None)


def closest_day(grid, daily, threshold):
    """``(day, censored)`` minimising ``|daily - threshold|``, earliest on ties."""
    idx = int(np.argmin(np.abs(daily - threshold)))
    brackets = daily.min() <= threshold <= daily.max()
    censored = (idx in (0, len(grid) - 1)) and not brackets
    return int(grid[idx]), censored


def predict_maturity_loess(series, threshold=DEFAULT_THRESHOLD, frac=DEFAULT_FRAC,
                           robust_iters=DEFAULT_ROBUST_ITERS):
    """Threshold-crossing maturity day of one plot (a PlotSeries or GliSeries)."""
    src = series if isinstance(series, GliSeries) else GliSeries.from_series(series)
    if len(src.days) < 2:
        raise ValueError(f"plot {src.plot_id}: need at least two flights")
    fit = LoessFit.fit(src, frac, robust_iters)
    day, censored = closest_day(fit.grid, fit.fitted, threshold)
    return LoessPrediction(src.plot_id, src.environment_id, day, censored, fit)


def fit_all(series_list, frac=DEFAULT_FRAC, robust_iters=DEFAULT_ROBUST_ITERS):
    """Fit every plot once; predictions for many thresholds reuse the fits."""
    fits = []
    for s in series_list:
        src = s if isinstance(s, GliSeries) else GliSeries.from_series(s)
        fits.append(LoessFit.fit(src, frac, robust_iters))
    return fits


@dataclass
class ThresholdGrid:
    thresholds: tuple
    # env -> metric -> list of values, one per threshold
    table: dict
    n: dict

    METRICS = ("r2", "mae", "mse")

    def best(self, env, metric):
        """Index of the best threshold for a metric; the lowest threshold wins ties."""
        vals = np.asarray(self.table[env][metric], dtype=np.float64)
        vals = np.where(np.isnan(vals), -np.inf if metric == "r2" else np.inf, vals)
        return int(np.argmax(vals) if metric == "r2" else np.argmin(vals))

    def best_threshold(self, env, metric="mae"):
        return self.thresholds[self.best(env, metric)]

    def rows(self):
        """Appendix layout: (environment, metric, values..., best index)."""
        for env in sorted(self.table):
            for m in self.METRICS:
                yield env, m, list(self.table[env][m]), self.best(env, m)


def threshold_grid_search(series_list, thresholds=GRID_THRESHOLDS, frac=DEFAULT_FRAC,
                          robust_iters=DEFAULT_ROBUST_ITERS, fits=None):
    """r2 / MAE / MSE per environment for each candidate threshold."""
    thresholds = tuple(float(t) for t in thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    if any(s.rm_day is None for s in series_list):
        raise ValueError("threshold search needs ground truth for every plot")
    fits = fits if fits is not None else fit_all(series_list, frac, robust_iters)
    envs = sorted({s.environment_id for s in series_list})
    table, counts = {}, {}
    for env in envs:
        idx = [i for i, s in enumerate(series_list) if s.environment_id == env]
        gt = np.array([series_list[i].rm_day for i in idx], dtype=np.float64)
        table[env] = {m: [] for m in ThresholdGrid.METRICS}
        for t in thresholds:
            pred = np.array([closest_day(fits[i].grid, fits[i].fitted, t)[0] for i in idx], dtype=np.float64)
            met = regression_metrics(pred, gt)
            for m in ThresholdGrid.METRICS:
                table[env][m].append(met[m])
        counts[env] = len(idx)
    return ThresholdGrid(thresholds, table, counts)
