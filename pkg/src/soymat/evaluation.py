"""Per-environment evaluation, method comparison and advancement-decision reports."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .baseline import GRID_THRESHOLDS, ThresholdGrid, fit_all, closest_day, threshold_grid_search
from .ingest import rm_day_decode
from .metrics import MetricsReport, MetricsRow
from .training import predict

CNN = "cnn-lstm"
LOESS = "loess"
SCHEDULE_ORDER = ("weekly", "biweekly")
CONFIDENCE_WINDOW = 2
SCHEDULE_MARGIN = 0.05


def _by_env(series, values):
    groups = {}
    for s, v in zip(series, values):
        groups.setdefault(s.environment_id, []).append((s, v))
    return groups


def evaluate(config, params, data, schedule, partition="test", predictions=None):
    """Metrics per environment for the network on one partition.

    Returns ``(report, predictions)``; ``predictions`` aligns with ``data``.
    """
    pred = predict(config, params, data) if predictions is None else np.asarray(predictions, float)
    report = MetricsReport()
    for env, items in sorted(_by_env(data, pred).items()):
        gt = [s.rm_day for s, _ in items]
        report.add(env, schedule, CNN, partition, [p for _, p in items], gt)
    return report, pred


def loess_predictions(series, threshold, fits=None):
    fits = fits if fits is not None else fit_all(series)
    return np.array([closest_day(f.grid, f.fitted, threshold)[0] for f in fits], dtype=np.float64)


def loess_report(series, schedule, partition="test", threshold=None, grid=None):
    """LOESS metrics per environment.

    With a fixed ``threshold`` every metric comes from that threshold. Without
    one, each metric reports its best value over the threshold grid, as the
    grid-searched benchmark does.
    """
    report = MetricsReport()
    if threshold is not None:
        pred = loess_predictions(series, threshold)
        for env, items in sorted(_by_env(series, pred).items()):
            report.add(env, schedule, LOESS, partition, [p for _, p in items], [s.rm_day for s, _ in items])
        return report, None
    grid = grid or threshold_grid_search(series, GRID_THRESHOLDS)
    for env in sorted(grid.table):
        vals = {m: grid.table[env][m][grid.best(env, m)] for m in ThresholdGrid.METRICS}
        report.rows.append(MetricsRow(env, schedule, LOESS, partition, vals["r2"], vals["mae"],
                                      vals["mse"], grid.n[env]))
    return report, grid


@dataclass
class ComparisonTable:
    """Rows of (environment, metric) against columns of schedule x {train, test, loess}."""

    columns: list
    rows: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["environment", "metric"] + self.columns)
            for env, metric, vals in self.rows:
                w.writerow([env, metric] + ["nan" if math.isnan(v) else f"{v:.3f}" for v in vals])
        return path


def compare(cnn, loess):
    """Side-by-side table of network (train/test) and LOESS metrics."""
    cnn_keys = {(r.environment, r.schedule) for r in cnn.rows}
    loess_keys = {(r.environment, r.schedule) for r in loess.rows}
    if cnn_keys != loess_keys:
        raise ValueError(f"reports cover different environment/schedule sets: "
                         f"{sorted(cnn_keys ^ loess_keys)}")
    schedules = [s for s in SCHEDULE_ORDER if any(k[1] == s for k in cnn_keys)]
    schedules += sorted({k[1] for k in cnn_keys} - set(schedules))
    columns = []
    for s in schedules:
        columns += [f"{s}_{CNN}_train", f"{s}_{CNN}_test", f"{s}_{LOESS}"]
    table = ComparisonTable(columns)
    for env in sorted({k[0] for k in cnn_keys}):
        for metric in ThresholdGrid.METRICS:
            vals = []
            for s in schedules:
                for method, part, rep in ((CNN, "train", cnn), (CNN, "test", cnn)):
                    try:
                        vals.append(getattr(rep.get(env, s, method, part), metric))
                    except KeyError:
                        raise ValueError(f"missing {method} {part} row for {env}/{s}") from None
                lo = [r for r in loess.rows if (r.environment, r.schedule) == (env, s)]
                vals.append(getattr(lo[0], metric))
            table.rows.append((env, metric, vals))
    return table


@dataclass
class PlotDecision:
    environment_id: str
    plot_id: str
    schedule: str
    predicted: float
    rm_day: int
    date: str
    truth: int = None
    confident: bool = None


@dataclass
class DecisionReport:
    plots: list
    # env -> schedule -> fraction of plots within the window
    within: dict
    recommendation: dict

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["environment", "plot_id", "schedule", "predicted", "rm_day", "date",
                        "truth", "confident"])
            for p in self.plots:
                w.writerow([p.environment_id, p.plot_id, p.schedule, f"{p.predicted:.3f}", p.rm_day,
                            p.date, "" if p.truth is None else p.truth,
                            "" if p.confident is None else int(p.confident)])
        return path

    def summary_rows(self):
        for env in sorted(self.within):
            for s in SCHEDULE_ORDER:
                if s in self.within[env]:
                    yield env, s, self.within[env][s], self.recommendation.get(env, "")


def decision_report(predictions, confidence_window=CONFIDENCE_WINDOW, margin=SCHEDULE_MARGIN, year=2019):
    """Per-plot calls and per-environment flight-schedule advice.

    ``predictions`` maps schedule -> list of ``(series, predicted_day)``. A plot
    is confident when its whole-day estimate is within ``confidence_window``
    days of the ground truth. Bi-weekly flights are recommended for an
    environment when their within-window fraction is no more than ``margin``
    below the weekly one.
    """
    plots, within = [], {}
    for schedule, items in predictions.items():
        hits = {}
        for s, pred in items:
            day = int(math.floor(float(pred) + 0.5))
            date = rm_day_decode(min(max(day, 0), 91), year).isoformat()
            ok = None if s.rm_day is None else abs(day - s.rm_day) <= confidence_window
            plots.append(PlotDecision(s.environment_id, s.plot_id, schedule, float(pred), day, date,
                                      s.rm_day, ok))
            if ok is not None:
                hits.setdefault(s.environment_id, []).append(ok)
        for env, flags in hits.items():
            within.setdefault(env, {})[schedule] = float(np.mean(flags))
    rec = {}
    for env, fr in within.items():
        if "weekly" in fr and "biweekly" in fr:
            rec[env] = "biweekly" if fr["biweekly"] >= fr["weekly"] - margin else "weekly"
    plots.sort(key=lambda p: (p.environment_id, p.plot_id, SCHEDULE_ORDER.index(p.schedule)
                              if p.schedule in SCHEDULE_ORDER else 99))
    return DecisionReport(plots, within, rec)
