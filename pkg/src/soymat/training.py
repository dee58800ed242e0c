"""Data splitting and the mini-batch training loop for the CNN-LSTM regressor."""

import contextlib
import logging
import math
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .neural.loss import huber_loss, huber_per_sample
from .neural.network import NetworkConfig, forward, backward, init_params
from .neural.optim import AdamState, adam_step, inverse_time_lr

log = logging.getLogger(__name__)

PRECISIONS = {32: np.float32, 64: np.float64}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite training loss {loss!r} in epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 300
    lr: float = 1e-3
    decay: float = 1e-1
    huber_delta: float = 1.0
    seed: int = 0
    precision: int = 32
    # cap on optimizer updates; reads "iterations" as mini-batch steps when set
    max_steps: int = None
    normalize_targets: bool = True
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0 or self.decay < 0:
            raise ValueError("batch_size must be positive; epochs, lr and decay non-negative")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.precision not in PRECISIONS:
            raise ValueError("precision must be 32 or 64")

    def to_dict(self):
        return asdict(self)


def _half_up(v):
    return int(math.floor(v + 0.5))


def _env_stream(seed, env, tag):
    return np.random.default_rng(np.random.SeedSequence([seed, tag, zlib.crc32(env.encode())]))


@dataclass
class Split:
    """Disjoint (environment, plot_id) key sets."""

    train_ids: set = field(default_factory=set)
    val_ids: set = field(default_factory=set)
    test_ids: set = field(default_factory=set)

    def partition(self, series):
        parts = {"train": [], "val": [], "test": []}
        for s in series:
            k = (s.environment_id, s.plot_id)
            if k in self.train_ids:
                parts["train"].append(s)
            elif k in self.val_ids:
                parts["val"].append(s)
            elif k in self.test_ids:
                parts["test"].append(s)
        return parts["train"], parts["val"], parts["test"]

    def sizes(self, env=None):
        pick = (lambda ks: ks) if env is None else (lambda ks: {k for k in ks if k[0] == env})
        return len(pick(self.train_ids)), len(pick(self.val_ids)), len(pick(self.test_ids))


def split(series, seed, test_fraction=0.15, val_fraction=0.10, test_sizes=None, min_plots=10):
    """Per-environment random test hold-out, then a validation slice of the rest.

    ``test_sizes`` (env -> count) overrides the fractional test size.
    """
    by_env = {}
    for s in series:
        if s.rm_day is None:
            raise ValueError(f"plot {s.environment_id}/{s.plot_id} has no ground truth")
        by_env.setdefault(s.environment_id, []).append(s.plot_id)
    out = Split()
    for env in sorted(by_env):
        ids = sorted(by_env[env])
        n = len(ids)
        if n < min_plots:
            raise ValueError(f"environment {env!r} has {n} plots; at least {min_plots} are needed to split")
        n_test = (test_sizes or {}).get(env, _half_up(test_fraction * n))
        if not 0 < n_test < n:
            raise ValueError(f"environment {env!r}: test size {n_test} out of range for {n} plots")
        n_val = _half_up(val_fraction * (n - n_test))
        perm = _env_stream(seed, env, 11).permutation(n)
        keys = [(env, ids[i]) for i in perm]
        out.test_ids.update(keys[:n_test])
        out.val_ids.update(keys[n_test:n_test + n_val])
        out.train_ids.update(keys[n_test + n_val:])
    return out


def series_array(series):
    """Stack series into a uint8 array (N, T, H, W, C)."""
    lengths = {len(s.snips) for s in series}
    if len(lengths) > 1:
        raise ValueError(f"series have mixed lengths {sorted(lengths)}; select one schedule first")
    return np.stack([s.stack() for s in series])


def to_input(batch_u8, dtype):
    return batch_u8.astype(dtype) * dtype(1.0 / 255.0)


def _threads(deterministic):
    if not deterministic:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(1)


def predict(config, params, series, batch_size=64):
    """Predictions in days for a list of PlotSeries (or a uint8 array)."""
    x = series if isinstance(series, np.ndarray) else series_array(series)
    dtype = params.dtype.type
    out = [forward(config, params, to_input(x[k:k + batch_size], dtype))[0]
           for k in range(0, len(x), batch_size)]
    return np.concatenate(out).astype(np.float64) if out else np.zeros(0)


def _targets(series):
    return np.array([s.rm_day for s in series], dtype=np.float64)


def train(config, train_data, val_data, train_cfg, params=None, on_epoch=None):
    """Fit the network with Huber loss and Adam; no early stopping.

    Returns ``(params, trace)`` where ``trace`` holds one
    ``{"epoch", "train_loss", "val_loss"}`` dict per epoch. The train loss is the
    mean per-sample loss seen during the epoch's updates; the validation loss
    is measured after the epoch.
    """
    if not train_data:
        raise ValueError("empty training set")
    if any(s.rm_day is None for s in list(train_data) + list(val_data)):
        raise ValueError("training requires ground truth for every series")
    if any(len(s.snips) != config.time_steps for s in train_data):
        raise ValueError(f"training series must have {config.time_steps} snips")
    dtype = PRECISIONS[train_cfg.precision]
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 21]))
    x_tr, y_tr = series_array(train_data), _targets(train_data)
    x_va = series_array(val_data) if val_data else None
    y_va = _targets(val_data)
    if params is None:
        params = init_params(config, rng, dtype)
        if train_cfg.normalize_targets:
            params.target_offset = float(y_tr.mean())
            sd = float(y_tr.std())
            params.target_scale = sd if sd > 0 else 1.0
    else:
        params = params.astype(dtype)
    state = AdamState.zeros_like(params.weights)
    n = len(x_tr)
    trace = []
    with _threads(train_cfg.deterministic):
        for epoch in range(1, train_cfg.epochs + 1):
            if train_cfg.max_steps is not None and state.t >= train_cfg.max_steps:
                break
            order = rng.permutation(n)
            losses = []
            for k in range(0, n, train_cfg.batch_size):
                if train_cfg.max_steps is not None and state.t >= train_cfg.max_steps:
                    break
                idx = order[k:k + train_cfg.batch_size]
                pred, cache = forward(config, params, to_input(x_tr[idx], dtype))
                target = y_tr[idx].astype(dtype)
                _, grad = huber_loss(target, pred, train_cfg.huber_delta)
                losses.extend(huber_per_sample(target, pred, train_cfg.huber_delta).tolist())
                grads = backward(config, params, cache, grad)
                lr_t = inverse_time_lr(train_cfg.lr, train_cfg.decay, state.t)
                adam_step(params.weights, grads, state, lr_t)
            train_loss = math.fsum(losses) / max(len(losses), 1)
            if not math.isfinite(train_loss):
                raise TrainingDiverged(epoch, train_loss)
            val_loss = math.nan
            if x_va is not None:
                pv = predict(config, params, x_va, train_cfg.batch_size)
                val_loss = math.fsum(huber_per_sample(y_va, pv, train_cfg.huber_delta).tolist()) / len(pv)
            rec = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss}
            trace.append(rec)
            log.info("epoch %d train %.4f val %.4f", epoch, train_loss, val_loss)
            if on_epoch is not None:
                on_epoch(rec)
    params.meta.update({"steps": state.t, "epochs": len(trace)})
    return params, trace


def write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for r in trace:
            fh.write(f"{r['epoch']},{r['train_loss']!r},{r['val_loss']!r}\n")
    return path
