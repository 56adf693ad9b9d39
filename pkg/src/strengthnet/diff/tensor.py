"""Tensors and the computation tape used for reverse-mode differentiation."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteValue, NotScalarLoss


class Tensor:
    """A numpy array plus an optional gradient accumulator.

    Values are float32 unless ``dtype`` says otherwise; gradient checking
    works on float64 copies.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "tape")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = np.asarray(data, dtype=np.float32 if dtype is None else dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager so ops inside the block are recorded::

        with Tape() as tape:
            loss = model_loss(params, batch)
        tape.backward(loss)
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()

    def backward(self, loss: Tensor, params=None):
        """Reverse sweep; gradients accumulate into ``.grad`` of leaf tensors."""
        if loss.data.size != 1:
            raise NotScalarLoss(f"loss has shape {loss.shape}")
        produced = {id(node.out) for node in self.nodes}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and id(t) not in produced and t.grad is None:
                    t.zero_grad()
        for p in params or ():
            if p.grad is None:
                p.zero_grad()
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.out), None)
            if g_out is None:
                continue
            for t, g in zip(node.inputs, node.backward(g_out)):
                if g is None or not t.requires_grad:
                    continue
                if id(t) in produced:
                    key = id(t)
                    grads[key] = grads[key] + g if key in grads else g
                else:
                    t.grad += g
        self.clear()


def current_tape():
    return Tape._stack[-1] if Tape._stack else None


def backward(loss: Tensor, params=None, tape: Tape | None = None):
    """Populate ``.grad`` on every tracked leaf reachable from ``loss``."""
    tape = tape or loss.tape or current_tape()
    if tape is None or not tape.nodes:
        raise NotScalarLoss("no recorded operations to differentiate")
    tape.backward(loss, params)


def record(out_data, inputs, backward_fn, name=None) -> Tensor:
    """Wrap an op result and, if any input is tracked, push it on the tape."""
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteValue(f"non-finite output from {name or 'op'}")
    track = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track, dtype=out_data.dtype)
    tape = current_tape()
    if track and tape is not None:
        tape.nodes.append(_Node(out, inputs, backward_fn))
        out.tape = tape
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
