"""Central finite-difference verification of backward passes."""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tape, Tensor


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return np.abs(analytic - numeric) / denom


def _scalarize(out, weights):
    if out.size == 1:
        return ops.reshape(out, ())
    return ops.sum(ops.mask_mul(out, weights))


def grad_check(fn, inputs, step=1e-4, max_elements=None, seed=0):
    """Largest relative error between backward and finite-difference gradients.

    ``fn`` maps the input tensors to an output tensor.  Non-scalar outputs
    are reduced with a fixed random projection so every output component
    takes part.  With ``max_elements`` set, only that many seeded-random
    coordinates of each large input are probed.
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    weights = rng.uniform(0.5, 1.5, size=out.shape) * rng.choice([-1.0, 1.0], size=out.shape)

    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = _scalarize(fn(*inputs), weights)
    tape.backward(loss)

    def f():
        return float(_scalarize(fn(*inputs), weights).data)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            coords = rng.choice(flat.size, size=max_elements, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            numeric = (fp - fm) / (2 * step)
            worst = max(worst, float(relative_error(analytic.reshape(-1)[i], numeric)))
    return worst


def kink_margin(fn, inputs):
    """Distance of a forward pass from ReLU kinks and max-reduction ties."""
    with ops.kink_probe() as probe:
        fn(*inputs)
    return probe.margin


def random_point(shapes, rng, low=-1.0, high=1.0):
    return [Tensor(rng.uniform(low, high, size=s), requires_grad=True) for s in shapes]
