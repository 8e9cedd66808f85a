"""Tensor values and the tape that records differentiable operations.

Operations only record themselves while a :class:`Tape` is active and at
least one input requires a gradient; outside a tape every op is a plain
numpy computation, which is what inference uses.
"""
from __future__ import annotations

import weakref

import numpy as np

from ..exceptions import ContractError

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """Dense float array with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def item(self):
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of operations for one forward pass.

    Usage::

        with Tape() as tape:
            loss = model(x)
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, parents, backward):
        # weak back-reference: a strong one would make every recorded array
        # part of a reference cycle and delay its release until a gc pass
        out._tape = weakref.ref(self)
        self.nodes.append(_Node(out, parents, backward))

    def backward(self, loss: Tensor):
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is None or loss._tape() is not self:
            raise ContractError("loss was not produced on this tape")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=parent.data.dtype, copy=True)
                else:
                    parent.grad += pg


def backward(loss: Tensor):
    """Populate ``.grad`` on every requires-grad tensor that feeds ``loss``."""
    tape = loss._tape() if loss._tape is not None else None
    if tape is None:
        raise ContractError("loss has no recorded operations; run the forward pass inside a Tape")
    tape.backward(loss)


def active_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def make_result(data, parents, backward_fn):
    """Wrap an op result, recording it when a tape is active and gradients flow."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward_fn)
    return out


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
