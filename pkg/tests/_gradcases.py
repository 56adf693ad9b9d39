"""Gradient-check cases shared by the unit tests and the acceptance suite."""

import numpy as np

from strengthnet import diff as D
from strengthnet.diff import gradient_check
from strengthnet.diff.tensor import record
from strengthnet.model import StrengthNetConfig, forward, init_params, total_loss

RNG = np.random.default_rng(1234)
PER_OP_TOL = 1e-4


def rand(*shape, scale=1.0):
    return RNG.normal(scale=scale, size=shape)


def scale(t, w):
    w = np.asarray(w, dtype=np.float64).reshape(t.shape)
    return record(t.data * w, [t], lambda g: (g * w,), "scale")


def proj(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


LSTM_H, LSTM_D = 3, 4


def lstm_inputs(b=2, t=5):
    k = 1 / np.sqrt(LSTM_H)
    out = {"x": rand(b, t, LSTM_D)}
    for d in ("f", "b"):
        out[f"{d}wx"] = RNG.uniform(-k, k, (LSTM_D, 4 * LSTM_H))
        out[f"{d}wh"] = RNG.uniform(-k, k, (LSTM_H, 4 * LSTM_H))
        out[f"{d}b"] = RNG.uniform(-k, k, 4 * LSTM_H)
    return out


def lstm_call(p, mask):
    return D.bilstm_layer(p["x"], mask, (p["fwx"], p["fwh"], p["fb"]), (p["bwx"], p["bwh"], p["bb"]))


MASK = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=np.float64)

# op name -> (closure producing a non-scalar tensor, inputs)
OP_CASES = {
    "relu": (lambda p: D.relu(p["x"]), {"x": rand(3, 4) + 0.05}),
    "sigmoid": (lambda p: D.sigmoid(p["x"]), {"x": rand(3, 4)}),
    "tanh": (lambda p: D.tanh(p["x"]), {"x": rand(3, 4)}),
    "softmax": (lambda p: D.softmax(p["x"]), {"x": rand(3, 4)}),
    "dense": (lambda p: D.dense(p["x"], p["w"], p["b"]), {"x": rand(2, 3, 5), "w": rand(5, 4), "b": rand(4)}),
    "conv2d_1x1": (lambda p: D.conv2d(p["x"], p["w"], p["b"], (1, 1)),
                   {"x": rand(2, 4, 7, 2), "w": rand(3, 3, 2, 3), "b": rand(3)}),
    "conv2d_1x3": (lambda p: D.conv2d(p["x"], p["w"], p["b"], (1, 3)),
                   {"x": rand(2, 4, 8, 2), "w": rand(3, 3, 2, 3), "b": rand(3)}),
    "bilstm": (lambda p: lstm_call(p, None), lstm_inputs()),
    "bilstm_masked": (lambda p: lstm_call(p, MASK), lstm_inputs()),
    "avg_pool_time": (lambda p: D.avg_pool_time(p["x"], MASK), {"x": rand(2, 5, 3)}),
    "flatten_freq": (lambda p: D.flatten_freq(p["x"]), {"x": rand(2, 3, 4, 5)}),
    "apply_time_mask": (lambda p: D.apply_time_mask(p["x"], MASK), {"x": rand(2, 5, 3)}),
    "dropout": (lambda p: D.dropout(p["x"], 0.3, True, np.random.default_rng(5)), {"x": rand(4, 6)}),
    "add": (lambda p: D.add(p["a"], p["b"]), {"a": rand(3, 2), "b": rand(3, 2)}),
    "reshape": (lambda p: D.reshape(p["x"], (6, 2)), {"x": rand(3, 4)}),
}


def projected(fn, shape_seed):
    def closure(p):
        out = fn(p)
        return D.tsum(scale(out, proj(out.shape, shape_seed)))
    return closure


def extra_cases():
    """Losses and a strided conv, as (scalar closure, inputs)."""
    y = np.eye(4)[[0, 2, 3]]
    mae_inputs = {"p": rand(2, 5), "t": rand(2, 5)}
    return {
        "mae_loss": (lambda p: D.mae_loss(p["p"], p["t"]), mae_inputs),
        "mae_loss_masked": (lambda p: D.mae_loss(p["p"], p["t"], MASK), mae_inputs),
        "cross_entropy": (lambda p: D.cross_entropy_loss(D.softmax(p["z"]), y), {"z": rand(3, 4)}),
        "conv2d_2x3": (projected(lambda p: D.conv2d(p["x"], p["w"], p["b"], (2, 3)), 3),
                       {"x": rand(1, 5, 7, 2), "w": rand(3, 3, 2, 2), "b": rand(2)}),
    }


def per_op_errors():
    """Relative gradient error of every op case."""
    out = {name: gradient_check(projected(fn, 11), inputs) for name, (fn, inputs) in OP_CASES.items()}
    out.update({name: gradient_check(fn, inputs) for name, (fn, inputs) in extra_cases().items()})
    return out


def e2e_gradient_errors(max_coords=20, h=1e-6):
    """Per-tensor finite-difference errors of the full loss on a 6-frame input.

    Biases are moved off zero and the step is small, so the check measures
    the gradient code rather than finite differences straddling ReLU kinks.
    """
    cfg = StrengthNetConfig(dropout=0.0)
    p = init_params(cfg, 5, dtype=np.float64)
    rng = np.random.default_rng(1)
    for name, v in p.items():
        if name.endswith(".b"):
            v.data += rng.uniform(-0.1, 0.1, v.shape)
    names = sorted(p)

    def loss(t):
        out = forward({n: t[n] for n in names}, t["x"], cfg)
        return total_loss(out, [0.7], np.eye(4)[[1]]).total

    inputs = {n: p[n].data for n in names}
    inputs["x"] = np.random.default_rng(0).normal(size=(1, 6, 80))
    return gradient_check(loss, inputs, max_coords=max_coords, h=h, per_input=True)
