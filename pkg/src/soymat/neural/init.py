import numpy as np


def fans(shape):
    """Fan-in/fan-out of a weight shape.

    Dense/LSTM kernels are ``(in, out)``; conv kernels are ``(kh, kw, in, out)``
    and count the receptive field on both sides.
    """
    if len(shape) < 2:
        raise ValueError(f"cannot derive fans from shape {shape}")
    receptive = int(np.prod(shape[:-2]))
    return shape[-2] * receptive, shape[-1] * receptive


def xavier_uniform(shape, rng):
    fan_in, fan_out = fans(shape)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
