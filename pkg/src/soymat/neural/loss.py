import numpy as np


def huber_loss(y, y_hat, delta=1.0):
    """Mean Huber loss over the batch and its gradient w.r.t. ``y_hat``.

    Quadratic ``0.5 * e**2`` for ``|e| <= delta``, linear
    ``delta * |e| - 0.5 * delta**2`` beyond.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    e = y_hat - y
    a = np.abs(e)
    quad = a <= delta
    per = np.where(quad, 0.5 * e * e, delta * a - 0.5 * delta * delta)
    grad = np.where(quad, e, delta * np.sign(e)) / max(e.size, 1)
    return float(per.mean()) if per.size else 0.0, grad.astype(y_hat.dtype, copy=False)


def huber_per_sample(y, y_hat, delta=1.0):
    e = np.abs(np.asarray(y_hat, dtype=np.float64) - np.asarray(y, dtype=np.float64))
    return np.where(e <= delta, 0.5 * e * e, delta * e - 0.5 * delta * delta)
