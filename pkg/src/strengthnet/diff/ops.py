"""Differentiable operations needed by the acoustic model.

Every op takes and returns :class:`Tensor` objects and records a backward
closure on the active tape when any input requires a gradient.  Leading
axes are batch axes: sequences are ``(B, T, ...)`` and images ``(B, T, F, C)``.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, as_tensor, record

PROB_CLAMP = 1e-7


def _check(cond, message):
    if not cond:
        raise ShapeMismatch(message)


# ----------------------------------------------------------------- glue


def add(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"add: {a.shape} vs {b.shape}")
    return record(a.data + b.data, [a, b], lambda g: (g, g), "add")


def tsum(x: Tensor) -> Tensor:
    return record(np.asarray(x.data.sum(), dtype=x.dtype), [x], lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    _check(math.prod(shape) == x.data.size, f"reshape: {x.shape} -> {shape}")
    return record(x.data.reshape(shape), [x], lambda g: (g.reshape(x.shape),), "reshape")


def flatten_freq(x: Tensor) -> Tensor:
    """``(B, T, F, C) -> (B, T, C * F)`` with channel-major ordering."""
    _check(x.data.ndim == 4, f"flatten_freq expects rank 4, got {x.shape}")
    b, t, f, c = x.shape
    out = x.data.transpose(0, 1, 3, 2).reshape(b, t, c * f)
    return record(out, [x], lambda g: (g.reshape(b, t, c, f).transpose(0, 1, 3, 2),), "flatten_freq")


def apply_time_mask(x: Tensor, mask) -> Tensor:
    """Zero every frame whose mask entry is 0.  ``mask`` is ``(B, T)``."""
    if mask is None:
        return x
    m = np.asarray(mask, dtype=x.dtype)
    _check(m.shape == x.shape[:2], f"mask {m.shape} vs input {x.shape}")
    m = m.reshape(m.shape + (1,) * (x.data.ndim - 2))
    return record(x.data * m, [x], lambda g: (g * m,), "mask")


# ------------------------------------------------------------ elementwise


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return record(np.where(pos, x.data, 0).astype(x.dtype), [x], lambda g: (g * pos,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)
    return record(s, [x], lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record(y, [x], lambda g: (g * (1 - y * y),), "tanh")


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return record(s, [x], back, "softmax")


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity when ``train`` is off or ``rate`` is 0."""
    if not train or rate <= 0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return record(x.data * keep, [x], lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------- layers


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    _check(x.shape[-1] == w.shape[0] and b.shape == (w.shape[1],),
           f"dense: input {x.shape}, weight {w.shape}, bias {b.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = (x2 @ w.data + b.data).reshape(lead + (w.shape[1],))

    def back(g):
        g2 = g.reshape(-1, w.shape[1])
        return (g2 @ w.data.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0)

    return record(out, [x, w, b], back, "dense")


def same_padding(n: int, k: int, s: int) -> tuple[int, int, int]:
    """Output length ``ceil(n / s)`` and (before, after) padding; extra goes after."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride=(1, 1)) -> Tensor:
    """2-D convolution over (time, frequency) with "same" padding.

    ``x`` is ``(B, T, F, C_in)``, ``w`` is ``(kt, kf, C_in, C_out)``.
    """
    _check(x.data.ndim == 4, f"conv2d expects (B, T, F, C), got {x.shape}")
    kt, kf, cin, cout = w.shape
    _check(x.shape[3] == cin and b.shape == (cout,), f"conv2d: input {x.shape}, kernel {w.shape}")
    bsz, t, f, _ = x.shape
    st, sf = stride
    to, pt0, pt1 = same_padding(t, kt, st)
    fo, pf0, pf1 = same_padding(f, kf, sf)
    pads = ((0, 0), (pt0, pt1), (pf0, pf1), (0, 0))

    def im2col(xp):
        win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kf), axis=(1, 2))
        win = win[:, : st * (to - 1) + 1 : st, : sf * (fo - 1) + 1 : sf]
        return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kt * kf * cin)

    w2 = w.data.reshape(-1, cout)
    out = (im2col(np.pad(x.data, pads)) @ w2 + b.data).reshape(bsz, to, fo, cout)

    def back(g):
        g2 = g.reshape(-1, cout)
        # columns are rebuilt instead of cached to keep peak memory low
        cols = im2col(np.pad(x.data, pads))
        dw = (cols.T @ g2).reshape(w.shape)
        del cols
        dcols = (g2 @ w2.T).reshape(bsz, to, fo, kt, kf, cin)
        dxp = np.zeros((bsz, t + pt0 + pt1, f + pf0 + pf1, cin), dtype=g.dtype)
        for i in range(kt):
            for j in range(kf):
                dxp[:, i : i + st * (to - 1) + 1 : st, j : j + sf * (fo - 1) + 1 : sf, :] += dcols[:, :, :, i, j, :]
        return dxp[:, pt0 : pt0 + t, pf0 : pf0 + f, :], dw, g2.sum(axis=0)

    return record(out, [x, w, b], back, "conv2d")


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _lstm_forward(xw, m, wh, reverse):
    """One direction over precomputed input projections ``xw`` (B, T, 4H)."""
    bsz, t, h4 = xw.shape
    hid = h4 // 4
    h = np.zeros((bsz, hid), dtype=xw.dtype)
    c = np.zeros_like(h)
    ys = np.zeros((bsz, t, hid), dtype=xw.dtype)
    cache = []
    steps = range(t - 1, -1, -1) if reverse else range(t)
    for k in steps:
        z = xw[:, k] + h @ wh
        i = _sig(z[:, :hid])
        fg = _sig(z[:, hid : 2 * hid])
        gg = np.tanh(z[:, 2 * hid : 3 * hid])
        o = _sig(z[:, 3 * hid :])
        c_new = fg * c + i * gg
        tc = np.tanh(c_new)
        h_new = o * tc
        mk = m[:, k : k + 1]
        cache.append((k, i, fg, gg, o, c, h, tc, mk))
        ys[:, k] = mk * h_new
        c = mk * c_new + (1 - mk) * c
        h = mk * h_new + (1 - mk) * h
    return ys, cache


def _lstm_backward(gy, cache, wh):
    bsz, t, hid = gy.shape
    dh = np.zeros((bsz, hid), dtype=gy.dtype)
    dc = np.zeros_like(dh)
    dz_all = np.zeros((bsz, t, 4 * hid), dtype=gy.dtype)
    dwh = np.zeros_like(wh)
    for k, i, fg, gg, o, c_prev, h_prev, tc, mk in reversed(cache):
        dh_new = mk * (gy[:, k] + dh)
        dc_new = mk * dc + dh_new * o * (1 - tc * tc)
        dz = np.concatenate([
            dc_new * gg * i * (1 - i),
            dc_new * c_prev * fg * (1 - fg),
            dc_new * i * (1 - gg * gg),
            dh_new * tc * o * (1 - o),
        ], axis=1)
        dz_all[:, k] = dz
        dwh += h_prev.T @ dz
        dc = dc_new * fg + (1 - mk) * dc
        dh = dz @ wh.T + (1 - mk) * dh
    return dz_all, dwh


def bilstm_layer(x: Tensor, mask, fw, bw) -> Tensor:
    """Bidirectional LSTM, gates ordered (input, forget, cell, output).

    ``fw`` and ``bw`` are ``(W_x, W_h, b)`` triples with shapes ``(D, 4H)``,
    ``(H, 4H)``, ``(4H,)``.  Output is ``(B, T, 2H)`` = [forward, backward].
    Masked frames neither update the state nor emit output, so trailing
    padding leaves every real frame's output unchanged.
    """
    _check(x.data.ndim == 3, f"bilstm expects (B, T, D), got {x.shape}")
    bsz, t, d = x.shape
    m = np.ones((bsz, t), dtype=x.dtype) if mask is None else np.asarray(mask, dtype=x.dtype)
    _check(m.shape == (bsz, t), f"mask {m.shape} vs input {x.shape}")
    params = list(fw) + list(bw)
    for wx, wh, b in (fw, bw):
        hid = wh.shape[0]
        _check(wx.shape == (d, 4 * hid) and wh.shape == (hid, 4 * hid) and b.shape == (4 * hid,),
               f"bilstm weights {wx.shape}, {wh.shape}, {b.shape} for input dim {d}")
    x2 = x.data.reshape(-1, d)
    outs, caches = [], []
    for (wx, wh, b), reverse in ((fw, False), (bw, True)):
        xw = (x2 @ wx.data + b.data).reshape(bsz, t, -1)
        ys, cache = _lstm_forward(xw, m, wh.data, reverse)
        outs.append(ys)
        caches.append(cache)
    hf = outs[0].shape[2]
    out = np.concatenate(outs, axis=2)

    def back(g):
        dx = np.zeros_like(x2)
        grads = []
        for (wx, wh, b), cache, gy in zip((fw, bw), caches, (g[:, :, :hf], g[:, :, hf:])):
            dz, dwh = _lstm_backward(np.ascontiguousarray(gy), cache, wh.data)
            dz2 = dz.reshape(-1, dz.shape[2])
            dx += dz2 @ wx.data.T
            grads += [x2.T @ dz2, dwh, dz2.sum(axis=0)]
        return [dx.reshape(x.shape)] + grads

    return record(out, [x] + params, back, "bilstm")


# --------------------------------------------------------------- pooling


def avg_pool_time(x: Tensor, mask=None) -> Tensor:
    """Masked mean over axis 1: ``(B, T, ...) -> (B, ...)``."""
    bsz, t = x.shape[:2]
    m = np.ones((bsz, t), dtype=x.dtype) if mask is None else np.asarray(mask, dtype=x.dtype)
    _check(m.shape == (bsz, t), f"mask {m.shape} vs input {x.shape}")
    count = m.sum(axis=1)
    _check(np.all(count > 0), "every sequence needs at least one unmasked frame")
    extra = (1,) * (x.data.ndim - 2)
    w = (m / count[:, None]).reshape((bsz, t) + extra)
    out = (x.data * w).sum(axis=1)
    return record(out, [x], lambda g: (np.expand_dims(g, 1) * w,), "avg_pool_time")


# ---------------------------------------------------------------- losses


def mae_loss(pred: Tensor, target, mask=None) -> Tensor:
    """Mean absolute error.

    With a ``(B, T)`` mask the error is averaged over unmasked entries of each
    row and then over rows, so a padded batch weighs every utterance equally.
    The subgradient at zero error is 0.  The scalar is reduced in float64;
    gradients come back in each input's own dtype.
    """
    target = as_tensor(target, dtype=pred.dtype)
    _check(pred.shape == target.shape, f"mae: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data
    if mask is None:
        w = np.full(pred.shape, 1.0 / max(diff.size, 1))
    else:
        m = np.asarray(mask, dtype=np.float64)
        _check(m.shape == pred.shape, f"mae mask {m.shape} vs {pred.shape}")
        w = m / m.sum(axis=tuple(range(1, m.ndim)), keepdims=True) / m.shape[0]
    out = np.asarray((np.abs(diff) * w).sum())

    def back(g):
        d = g * np.sign(diff) * w
        return d.astype(pred.dtype), (-d).astype(target.dtype)

    return record(out, [pred, target], back, "mae_loss")


def cross_entropy_loss(probs: Tensor, onehot) -> Tensor:
    """Batch-mean categorical cross-entropy on probabilities floored at 1e-7.

    Reduced in float64, like :func:`mae_loss`.
    """
    y = np.asarray(onehot.data if isinstance(onehot, Tensor) else onehot, dtype=np.float64)
    _check(probs.shape == y.shape, f"cross_entropy: {probs.shape} vs {y.shape}")
    p = np.maximum(probs.data.astype(np.float64), PROB_CLAMP)
    n = probs.shape[0] if probs.data.ndim > 1 else 1
    out = np.asarray(-(y * np.log(p)).sum() / n)
    inside = probs.data >= PROB_CLAMP

    def back(g):
        return ((g * -y / p * inside / n).astype(probs.dtype),)

    return record(out, [probs], back, "cross_entropy")
