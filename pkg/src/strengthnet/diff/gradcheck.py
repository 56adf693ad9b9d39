"""Central finite-difference checks for the reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradient_check(fn, inputs: dict, seed: int = 0, h: float = 1e-3, max_coords: int = 200,
                   corrupt: float = 1.0, per_input: bool = False):
    """Largest relative error between analytic and numeric gradients.

    ``fn`` maps a dict of tensors to a scalar tensor.  Inputs are evaluated in
    float64.  For each input at most ``max_coords`` coordinates are sampled;
    the error for an input is ``||a - n|| / max(||a||, ||n||)`` over them.
    ``corrupt`` scales the analytic gradient, for testing the checker itself.
    With ``per_input`` a dict of errors by input name is returned instead.
    """
    rng = np.random.default_rng(seed)
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    tensors = {k: Tensor(v, requires_grad=True, dtype=np.float64) for k, v in arrays.items()}
    with Tape() as tape:
        loss = fn(tensors)
    tape.backward(loss, params=list(tensors.values()))

    def evaluate():
        return float(fn({k: Tensor(v, dtype=np.float64) for k, v in arrays.items()}).data)

    errors = {}
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
        analytic = tensors[name].grad.reshape(-1)[idx] * corrupt
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate()
            flat[i] = orig - h
            down = evaluate()
            flat[i] = orig
            numeric[n] = (up - down) / (2 * h)
        errors[name] = relative_error(analytic, numeric)
    if per_input:
        return errors
    return max(errors.values(), default=0.0)
