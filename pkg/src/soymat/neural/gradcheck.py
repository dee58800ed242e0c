"""Central finite-difference verification of the hand-written gradients."""

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .loss import huber_loss
from .network import NetworkConfig, forward, backward, init_params, layer_plan

TOLERANCE = 1e-4

# Smallest network that keeps every layer of the full stack non-degenerate.
# 40 columns make conv3 see an odd width (5), exercising asymmetric padding,
# and pool1 drop a trailing column.
SMALL_CONFIG = NetworkConfig(time_steps=3, input_h=64, input_w=40, filters=8,
                             lstm1_units=16, lstm2_units=16)


def relative_error(analytic, numeric):
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


@dataclass
class GradCheckResult:
    errors: dict = field(default_factory=dict)   # group -> worst relative error
    tolerance: float = TOLERANCE

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def per_layer(self):
        """Worst error per layer (parameter groups merged by layer name)."""
        out = {}
        for k, v in self.errors.items():
            layer = k.split(".")[0]
            out[layer] = max(out.get(layer, 0.0), v)
        return out

    def lines(self):
        for k, v in self.per_layer().items():
            yield f"{k:12s} {v:.3e}"
        yield f"{'max':12s} {self.max_error:.3e} {'PASS' if self.passed else 'FAIL'}"


def _sample(rng, size, samples):
    if size <= samples:
        return np.arange(size)
    return np.sort(rng.choice(size, size=samples, replace=False))


def _evaluate(f):
    r = f()
    return r if isinstance(r, tuple) else (r, None)


def numeric_gradient(f, arr, idx, eps, kink_retries=3):
    """Central differences of ``f()`` w.r.t. flat entries ``idx`` of ``arr`` (in place).

    ``f`` returns a scalar, or ``(scalar, signature)`` where the signature
    identifies the active ReLU units and max-pool winners. A perturbation that
    changes the signature straddles a kink; that entry is re-measured with a
    10x smaller step, up to ``kink_retries`` times.
    """
    flat = arr.reshape(-1)
    out = np.empty(len(idx))
    _, sig0 = _evaluate(f)
    for k, i in enumerate(idx):
        old = flat[i]
        step = eps
        for _ in range(kink_retries + 1):
            flat[i] = old + step
            up, sig_up = _evaluate(f)
            flat[i] = old - step
            down, sig_down = _evaluate(f)
            flat[i] = old
            out[k] = (up - down) / (2.0 * step)
            if sig0 is None or (sig_up == sig0 and sig_down == sig0):
                break
            step *= 0.1
    return out


def kink_signature(config, caches):
    """Bytes identifying every ReLU on/off state and max-pool winner of a forward pass."""
    parts = []
    for (_, kind, _), cache in zip(layer_plan(config), caches):
        if kind == "conv":
            parts.append(np.packbits(cache[1]).tobytes())
        elif kind == "pool":
            parts.append(cache[0].astype(np.uint8).tobytes())
    return b"".join(parts)


def grad_check(config=SMALL_CONFIG, params=None, batch=None, targets=None, eps=1e-5,
               samples=30, seed=0, fault=1.0):
    """Compare analytic parameter gradients of the Huber loss against finite differences.

    ``fault`` scales the analytic gradients; 2.0 plants a deliberate error.
    """
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_params(config, rng, np.float64)
        # non-zero biases so the bias paths are exercised away from zero
        for k, w in params.weights.items():
            if k.endswith(".b"):
                w[...] = rng.uniform(-0.1, 0.1, w.shape)
    params = params.astype(np.float64)
    if batch is None:
        batch = rng.uniform(0.0, 1.0, (2, config.time_steps, config.input_h, config.input_w,
                                       config.channels))
    batch = np.asarray(batch, dtype=np.float64)
    if targets is None:
        pred0, _ = forward(config, params, batch)
        # small residuals inside the quadratic branch keep the loss value, and
        # so the float64 rounding in each difference, small; the linear
        # branch is covered by layer_checks
        targets = pred0 + np.where(np.arange(len(batch)) % 2 == 0, 0.05, -0.03)
    targets = np.asarray(targets, dtype=np.float64)

    def loss():
        pred, caches = forward(config, params, batch)
        return huber_loss(targets, pred)[0], kink_signature(config, caches)

    pred, caches = forward(config, params, batch)
    grads = backward(config, params, caches, huber_loss(targets, pred)[1])
    result = GradCheckResult()
    for name, w in params.weights.items():
        idx = _sample(rng, w.size, samples)
        num = numeric_gradient(loss, w, idx, eps)
        ana = fault * grads[name].reshape(-1)[idx]
        result.errors[name] = float(relative_error(ana, num).max())
    return result


def layer_checks(eps=1e-5, seed=0, fault=1.0):
    """Input-gradient checks for each layer type in isolation.

    Each layer is wrapped in the scalar ``sum(out * r)`` for a fixed random ``r``.
    """
    rng = np.random.default_rng(seed)
    res = GradCheckResult()

    def check(name, fwd, bwd, x):
        out = fwd(x)
        r = rng.normal(size=out.shape)
        dx = fault * bwd(r)
        idx = np.arange(x.size)
        num = numeric_gradient(lambda: float(np.sum(fwd(x) * r)), x, idx, eps)
        res.errors[name] = float(relative_error(dx.reshape(-1), num).max())

    w = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    check("conv2d.dx", lambda x: L.conv2d_forward(x, w, b)[0],
          lambda r: L.conv2d_backward(r, L.conv2d_forward(xc, w, b)[1])[0],
          xc := rng.normal(size=(2, 5, 4, 2)))
    # distinct values so the pooled maxima are unambiguous
    xp = rng.permutation(2 * 5 * 4 * 2).reshape(2, 5, 4, 2) * 0.1
    check("maxpool.dx", lambda x: L.maxpool2d_forward(x)[0],
          lambda r: L.maxpool2d_backward(r, L.maxpool2d_forward(xp)[1]), xp)
    xr = rng.normal(size=(3, 4))
    xr[np.abs(xr) < 1e-3] = 0.5
    check("relu.dx", lambda x: L.relu_forward(x)[0],
          lambda r: L.relu_backward(r, L.relu_forward(xr)[1]), xr)
    wx, wh, bl = rng.normal(size=(3, 8)) * 0.5, rng.normal(size=(2, 8)) * 0.5, rng.normal(size=8) * 0.1
    for seq in (True, False):
        xl = rng.normal(size=(2, 4, 3))
        check(f"lstm.dx{'_seq' if seq else '_last'}", lambda x: L.lstm_forward(x, wx, wh, bl, seq)[0],
              lambda r: L.lstm_backward(r, L.lstm_forward(xl, wx, wh, bl, seq)[1])[0], xl)
    wd, bd = rng.normal(size=(4, 1)), rng.normal(size=1)
    xd = rng.normal(size=(3, 4))
    check("dense.dx", lambda x: L.dense_forward(x, wd, bd)[0],
          lambda r: L.dense_backward(r, L.dense_forward(xd, wd, bd)[1])[0], xd)
    y = rng.normal(size=6)
    yh = y + np.array([0.3, -0.7, 1.8, -2.2, 0.05, 4.0])
    check("huber.dyhat", lambda v: np.array(huber_loss(y, v)[0]),
          lambda r: r * huber_loss(y, yh)[1], yh)
    return res


def run_all(eps=1e-5, samples=30, seed=0, fault=1.0, config=SMALL_CONFIG):
    """Network parameter groups plus per-layer input gradients, merged."""
    res = grad_check(config, eps=eps, samples=samples, seed=seed, fault=fault)
    res.errors.update(layer_checks(eps, seed, fault).errors)
    return res
