from dataclasses import dataclass, field

import numpy as np


def inverse_time_lr(lr, decay, step):
    """Learning rate after ``step`` completed updates: ``lr / (1 + decay * step)``."""
    return lr / (1.0 + decay * step)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, weights, **kw):
        return cls({k: np.zeros_like(w) for k, w in weights.items()},
                   {k: np.zeros_like(w) for k, w in weights.items()}, **kw)


def adam_step(weights, grads, state, lr_t):
    """In-place Adam update with bias correction. Increments ``state.t``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, w in weights.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, expected {w.shape}")
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w -= (lr_t * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(w.dtype, copy=False)
    return weights
