"""The time-distributed CNN + two-layer LSTM regressor.

Layer stack for the default configuration (input extents exclude the batch axis)::

    conv1    (5, 256, 64, 3)
    conv2    (5, 128, 32, 32)
    pool1    (5, 64, 16, 32)
    conv3    (5, 32, 8, 32)
    conv4    (5, 16, 4, 32)
    pool2    (5, 8, 2, 32)
    flatten  (5, 4, 1, 32)
    lstm1    (5, 128)
    lstm2    (5, 256)
    dense    (256,)

Every convolution is 3x3, stride 2, 'same' padding, followed by ReLU.
"""

from dataclasses import dataclass, asdict, field

import numpy as np

from . import layers as L
from .init import xavier_uniform


@dataclass(frozen=True)
class NetworkConfig:
    time_steps: int = 5
    input_h: int = 256
    input_w: int = 64
    channels: int = 3
    filters: int = 32
    kernel: int = 3
    stride: int = 2
    n_conv: int = 4
    pool_after: tuple = (2, 4)
    lstm1_units: int = 256
    lstm2_units: int = 256
    dense_units: int = 1

    def __post_init__(self):
        for k in ("time_steps", "input_h", "input_w", "channels", "filters", "kernel",
                  "stride", "lstm1_units", "lstm2_units", "dense_units"):
            if getattr(self, k) < 1:
                raise ValueError(f"NetworkConfig.{k} must be positive")
        object.__setattr__(self, "pool_after", tuple(self.pool_after))

    def to_dict(self):
        d = asdict(self)
        d["pool_after"] = list(self.pool_after)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "pool_after": tuple(d.get("pool_after", (2, 4)))})


def layer_plan(config):
    """Ordered ``(name, kind, input_shape)`` entries derived from the config."""
    t = config.time_steps
    h, w, c = config.input_h, config.input_w, config.channels
    plan = []
    for k in range(1, config.n_conv + 1):
        plan.append((f"conv{k}", "conv", (t, h, w, c)))
        h, w, c = -(-h // config.stride), -(-w // config.stride), config.filters
        if k in config.pool_after:
            plan.append((f"pool{config.pool_after.index(k) + 1}", "pool", (t, h, w, c)))
            h, w = h // 2, w // 2
    if h < 1 or w < 1:
        raise ValueError(f"input {config.input_h}x{config.input_w} collapses to nothing")
    plan.append(("flatten", "flatten", (t, h, w, c)))
    flat = h * w * c
    plan.append(("lstm1", "lstm", (t, flat)))
    plan.append(("lstm2", "lstm", (t, config.lstm1_units)))
    plan.append(("dense", "dense", (config.lstm2_units,)))
    return plan


def flatten_size(config):
    _, _, (_, h, w, c) = [p for p in layer_plan(config) if p[0] == "flatten"][0]
    return h * w * c


def param_shapes(config):
    """Trainable tensors in a fixed order: name -> shape."""
    k, f = config.kernel, config.filters
    shapes = {}
    cin = config.channels
    for i in range(1, config.n_conv + 1):
        shapes[f"conv{i}.w"] = (k, k, cin, f)
        shapes[f"conv{i}.b"] = (f,)
        cin = f
    d, u1, u2 = flatten_size(config), config.lstm1_units, config.lstm2_units
    shapes["lstm1.wx"] = (d, 4 * u1)
    shapes["lstm1.wh"] = (u1, 4 * u1)
    shapes["lstm1.b"] = (4 * u1,)
    shapes["lstm2.wx"] = (u1, 4 * u2)
    shapes["lstm2.wh"] = (u2, 4 * u2)
    shapes["lstm2.b"] = (4 * u2,)
    shapes["dense.w"] = (u2, config.dense_units)
    shapes["dense.b"] = (config.dense_units,)
    return shapes


def param_count(config):
    if config is None:
        return 0
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


@dataclass
class NetworkParams:
    """Trainable weights plus the fixed output affine map.

    The network predicts ``target_offset + target_scale * dense_output``; the two
    scalars are set from the training targets and are not trained.
    """

    weights: dict
    target_offset: float = 0.0
    target_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def astype(self, dtype):
        return NetworkParams({k: v.astype(dtype) for k, v in self.weights.items()},
                             self.target_offset, self.target_scale, dict(self.meta))

    def copy(self):
        return self.astype(self.dtype)


def init_params(config, rng, dtype=np.float32):
    """Xavier-uniform weights, zero biases."""
    weights = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b"):
            weights[name] = np.zeros(shape, dtype=dtype)
        else:
            weights[name] = xavier_uniform(shape, rng).astype(dtype)
    return NetworkParams(weights)


def zero_params(config, dtype=np.float32):
    return NetworkParams({n: np.zeros(s, dtype=dtype) for n, s in param_shapes(config).items()})


def forward(config, params, x, trace=None):
    """Predict one value per series.

    ``x`` has shape (B, T, H, W, C) with pixel values already scaled. Returns
    ``(pred, cache)`` where ``pred`` has shape (B,). When ``trace`` is a list,
    each layer appends ``(name, input_shape_without_batch)``.
    """
    expected = (config.time_steps, config.input_h, config.input_w, config.channels)
    if x.ndim != 5 or x.shape[1:] != expected:
        raise ValueError(f"expected batch of shape (B, {', '.join(map(str, expected))}), got {x.shape}")
    W = params.weights
    bsz, t = x.shape[:2]
    a = x.reshape((bsz * t,) + x.shape[2:])
    caches = []
    for name, kind, _ in layer_plan(config):
        if trace is not None:
            framewise = kind in ("conv", "pool", "flatten")
            trace.append((name, ((t,) if framewise else ()) + tuple(a.shape[1:])))
        if kind == "conv":
            a, cc = L.conv2d_forward(a, W[f"{name}.w"], W[f"{name}.b"], config.stride, name)
            a, mask = L.relu_forward(a, inplace=True)
            caches.append((cc, mask))
        elif kind == "pool":
            a, pc = L.maxpool2d_forward(a)
            caches.append(pc)
        elif kind == "flatten":
            caches.append(a.shape)
            a = a.reshape(bsz, t, -1)
        elif kind == "lstm":
            a, lc = L.lstm_forward(a, W[f"{name}.wx"], W[f"{name}.wh"], W[f"{name}.b"],
                                   return_sequence=(name == "lstm1"), name=name)
            caches.append(lc)
        else:
            a, dc = L.dense_forward(a, W["dense.w"], W["dense.b"], name)
            caches.append(dc)
    out = a[:, 0] if config.dense_units == 1 else a
    pred = params.target_offset + params.target_scale * out
    return pred.astype(x.dtype, copy=False), caches


def backward(config, params, caches, dpred):
    """Gradients of a scalar loss w.r.t. every trainable tensor, given dL/dpred."""
    W = params.weights
    grads = {}
    d = (dpred * params.target_scale).astype(dpred.dtype, copy=False)
    d = d[:, None] if config.dense_units == 1 else d
    for (name, kind, _), cache in zip(reversed(layer_plan(config)), reversed(caches)):
        if kind == "dense":
            d, grads["dense.w"], grads["dense.b"] = L.dense_backward(d, cache)
        elif kind == "lstm":
            d, grads[f"{name}.wx"], grads[f"{name}.wh"], grads[f"{name}.b"] = L.lstm_backward(d, cache)
        elif kind == "flatten":
            d = d.reshape(cache)
        elif kind == "pool":
            d = L.maxpool2d_backward(d, cache)
        else:
            cc, mask = cache
            d = L.relu_backward(d, mask)
            d, grads[f"{name}.w"], grads[f"{name}.b"] = L.conv2d_backward(
                d, cc, need_dx=(name != "conv1"))
    return {k: grads[k] for k in W}
