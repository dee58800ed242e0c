"""Hand-derived forward and backward passes for the CNN-LSTM building blocks.

All image tensors are channels-last, ``(N, H, W, C)``. Every ``*_forward``
returns ``(out, cache)`` and the matching ``*_backward`` consumes the cache.
"""

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numpy fallback below is complete
    numba = None

USE_NUMBA = numba is not None


if numba is not None:
    @numba.njit(cache=True)
    def _im2col_kernel(xp, ho, wo, kh, kw, stride, cols):
        n, c = xp.shape[0], xp.shape[3]
        for a in range(n):
            for r in range(ho):
                for q in range(wo):
                    row = (a * ho + r) * wo + q
                    col = 0
                    for i in range(kh):
                        for j in range(kw):
                            for ch in range(c):
                                cols[row, col] = xp[a, stride * r + i, stride * q + j, ch]
                                col += 1

    @numba.njit(cache=True)
    def _col2im_kernel(dcols, ho, wo, kh, kw, stride, dxp):
        n, c = dxp.shape[0], dxp.shape[3]
        for a in range(n):
            for r in range(ho):
                for q in range(wo):
                    row = (a * ho + r) * wo + q
                    col = 0
                    for i in range(kh):
                        for j in range(kw):
                            for ch in range(c):
                                dxp[a, stride * r + i, stride * q + j, ch] += dcols[row, col]
                                col += 1


def same_padding(size, kernel, stride):
    """Return ``(before, after)`` zero padding for 'same' convolution.

    The extra pad of an odd total goes after (bottom/right).
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _row_windows(xp, i, ho, wo, kw, stride):
    """View of padded input rows feeding kernel row ``i``: (N, ho, wo, kw*C).

    Within one kernel row the kw*C taps are contiguous in memory, so each
    copy moves runs of kw*C values instead of C.
    """
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    base = xp[:, i:, :, :]
    return np.lib.stride_tricks.as_strided(
        base, shape=(n, ho, wo, kw * c), strides=(sn, stride * sh, stride * sw, sc),
        writeable=False)


def conv2d_forward(x, w, b, stride=2, name="conv2d"):
    """'Same'-padded 2-D convolution of ``x`` (N, H, W, C) with ``w`` (kh, kw, C, F)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2] or b.shape != (w.shape[3],):
        raise ValueError(
            f"{name}: shape mismatch, input {x.shape}, kernel {w.shape}, bias {b.shape}"
        )
    n, h, wd, c = x.shape
    kh, kw, _, f = w.shape
    pt, pb = same_padding(h, kh, stride)
    pl, pr = same_padding(wd, kw, stride)
    ho, wo = -(-h // stride), -(-wd // stride)
    xp = np.zeros((n, h + pt + pb, wd + pl + pr, c), dtype=x.dtype)
    xp[:, pt:pt + h, pl:pl + wd, :] = x
    if USE_NUMBA:
        cols = np.empty((n * ho * wo, kh * kw * c), dtype=x.dtype)
        _im2col_kernel(xp, ho, wo, kh, kw, stride, cols)
    else:
        cols = np.empty((n, ho, wo, kh, kw * c), dtype=x.dtype)
        for i in range(kh):
            cols[:, :, :, i, :] = _row_windows(xp, i, ho, wo, kw, stride)
        cols = cols.reshape(n * ho * wo, kh * kw * c)
    out = cols @ w.reshape(kh * kw * c, f)
    out += b
    cache = (cols, x.shape, w, stride, (pt, pl))
    return out.reshape(n, ho, wo, f), cache


def conv2d_backward(dout, cache, need_dx=True):
    cols, xshape, w, stride, (pt, pl) = cache
    n, h, wd, c = xshape
    kh, kw, _, f = w.shape
    _, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, f)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = d2 @ w.reshape(-1, f).T
    hp = max(stride * (ho - 1) + kh, h + pt)
    wp = max(stride * (wo - 1) + kw, wd + pl)
    dxp = np.zeros((n, hp, wp, c), dtype=dout.dtype)
    if USE_NUMBA:
        _col2im_kernel(dcols, ho, wo, kh, kw, stride, dxp)
        return dxp[:, pt:pt + h, pl:pl + wd, :], dw, db
    dcols = dcols.reshape(n, ho, wo, kh, kw, c)
    for i in range(kh):
        rows = dxp[:, i:i + stride * ho:stride]
        # taps closer than the stride do not overlap between neighbouring windows
        for j0 in range(0, kw, stride):
            j1 = min(j0 + stride, kw)
            sn, sh, sw, sc = rows.strides
            view = np.lib.stride_tricks.as_strided(
                rows[:, :, j0:, :], shape=(n, ho, wo, (j1 - j0) * c),
                strides=(sn, sh, stride * sw, sc))
            view += dcols[:, :, :, i, j0:j1, :].reshape(n, ho, wo, (j1 - j0) * c)
    return dxp[:, pt:pt + h, pl:pl + wd, :], dw, db


def maxpool2d_forward(x):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :2 * ho, :2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    # scan order within a window: (0,0), (0,1), (1,0), (1,1)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2d_backward(dout, cache):
    idx, (n, h, w, c) = cache
    ho, wo = dout.shape[1], dout.shape[2]
    dwin = (idx[..., None] == np.arange(4)) * dout[..., None]
    dwin = dwin.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros((n, h, w, c), dtype=dout.dtype)
    dx[:, :2 * ho, :2 * wo, :] = dwin.reshape(n, 2 * ho, 2 * wo, c)
    return dx


def relu_forward(x, inplace=False):
    mask = x > 0
    if inplace:
        return np.maximum(x, 0, out=x), mask
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_forward(x, wx, wh, b, return_sequence=True, name="lstm"):
    """Single LSTM layer over ``x`` of shape (B, T, D).

    Gate blocks along the last weight axis are ordered input, forget,
    candidate, output. ``h0 = c0 = 0``.
    """
    if x.ndim != 3 or wx.shape[0] != x.shape[2]:
        raise ValueError(f"{name}: input {x.shape} does not match kernel {wx.shape}")
    units = wh.shape[0]
    if wx.shape[1] != 4 * units or wh.shape[1] != 4 * units or b.shape != (4 * units,):
        raise ValueError(f"{name}: inconsistent weights {wx.shape}, {wh.shape}, {b.shape}")
    bsz, steps, dim = x.shape
    u = units
    zx = (x.reshape(-1, dim) @ wx).reshape(bsz, steps, 4 * u) + b
    h = np.zeros((bsz, steps + 1, u), dtype=x.dtype)
    c = np.zeros((bsz, steps + 1, u), dtype=x.dtype)
    gates = np.empty((bsz, steps, 4 * u), dtype=x.dtype)
    tanh_c = np.empty((bsz, steps, u), dtype=x.dtype)
    for t in range(steps):
        z = zx[:, t] + h[:, t] @ wh
        g = gates[:, t]
        g[:, :2 * u] = sigmoid(z[:, :2 * u])
        g[:, 2 * u:3 * u] = np.tanh(z[:, 2 * u:3 * u])
        g[:, 3 * u:] = sigmoid(z[:, 3 * u:])
        c[:, t + 1] = g[:, u:2 * u] * c[:, t] + g[:, :u] * g[:, 2 * u:3 * u]
        tanh_c[:, t] = np.tanh(c[:, t + 1])
        h[:, t + 1] = g[:, 3 * u:] * tanh_c[:, t]
    out = h[:, 1:] if return_sequence else h[:, -1]
    cache = (x, wx, wh, h, c, gates, tanh_c, return_sequence)
    return out, cache


def lstm_backward(dout, cache):
    x, wx, wh, h, c, gates, tanh_c, return_sequence = cache
    bsz, steps, dim = x.shape
    u = wh.shape[0]
    dh_seq = np.zeros((bsz, steps, u), dtype=dout.dtype)
    if return_sequence:
        dh_seq += dout
    else:
        dh_seq[:, -1] = dout
    dz = np.empty((bsz, steps, 4 * u), dtype=dout.dtype)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((bsz, u), dtype=dout.dtype)
    dc_next = np.zeros((bsz, u), dtype=dout.dtype)
    for t in reversed(range(steps)):
        g = gates[:, t]
        i, f, gc, o = g[:, :u], g[:, u:2 * u], g[:, 2 * u:3 * u], g[:, 3 * u:]
        dh = dh_seq[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tanh_c[:, t] ** 2)
        d = dz[:, t]
        d[:, :u] = dc * gc * i * (1.0 - i)
        d[:, u:2 * u] = dc * c[:, t] * f * (1.0 - f)
        d[:, 2 * u:3 * u] = dc * i * (1.0 - gc ** 2)
        d[:, 3 * u:] = dh * tanh_c[:, t] * o * (1.0 - o)
        dwh += h[:, t].T @ d
        dh_next = d @ wh.T
        dc_next = dc * f
    dz2 = dz.reshape(-1, 4 * u)
    dwx = x.reshape(-1, dim).T @ dz2
    db = dz2.sum(axis=0)
    dx = (dz2 @ wx.T).reshape(bsz, steps, dim)
    return dx, dwx, dwh, db


def dense_forward(x, w, b, name="dense"):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"{name}: input {x.shape} does not match weights {w.shape}")
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)
