"""Regression metrics in days and the per-environment report rows built from them."""

import csv
import json
import math
from dataclasses import dataclass, asdict, field

import numpy as np


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction/ground-truth length mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def mae(pred, gt):
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def mse(pred, gt):
    pred, gt = _pair(pred, gt)
    return float(np.mean((pred - gt) ** 2))


def r2(pred, gt, return_flag=False):
    """Coefficient of determination ``1 - SS_res / SS_tot``; may be negative.

    Undefined (NaN, flagged) when the ground truth has no variance.
    """
    pred, gt = _pair(pred, gt)
    if len(gt) < 2:
        raise ValueError("r2 needs at least two points")
    ss_tot = float(np.sum((gt - gt.mean()) ** 2))
    ss_res = float(np.sum((gt - pred) ** 2))
    undefined = ss_tot == 0
    value = math.nan if undefined else 1.0 - ss_res / ss_tot
    return (value, undefined) if return_flag else value


def regression_metrics(pred, gt):
    pred, gt = _pair(pred, gt)
    return {"r2": r2(pred, gt) if len(gt) >= 2 else math.nan,
            "mae": mae(pred, gt), "mse": mse(pred, gt), "n": int(len(gt))}


@dataclass
class MetricsRow:
    environment: str
    schedule: str
    method: str
    partition: str
    r2: float
    mae: float
    mse: float
    n: int


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)

    def add(self, environment, schedule, method, partition, pred, gt):
        m = regression_metrics(pred, gt)
        self.rows.append(MetricsRow(environment, schedule, method, partition,
                                    m["r2"], m["mae"], m["mse"], m["n"]))
        return self

    def extend(self, other):
        self.rows.extend(other.rows)
        return self

    def get(self, environment, schedule, method, partition):
        for r in self.rows:
            if (r.environment, r.schedule, r.method, r.partition) == (environment, schedule, method, partition):
                return r
        raise KeyError((environment, schedule, method, partition))

    def keys(self):
        return {(r.environment, r.schedule) for r in self.rows}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["environment", "schedule", "method", "partition", "r2", "mae", "mse", "n"])
            for r in self.rows:
                w.writerow([r.environment, r.schedule, r.method, r.partition,
                            _fmt(r.r2), _fmt(r.mae), _fmt(r.mse), r.n])
        return path

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump([asdict(r) for r in self.rows], fh, indent=1, allow_nan=True)
            fh.write("\n")
        return path


def _fmt(v):
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"
