"""Finite-difference gradient suite over every op and the full network."""
from __future__ import annotations

import time

import numpy as np

from .autodiff import Tensor, grad_check, kink_margin, ops
from .model import Batch, ModelConfig, forward_variant, init_params

SMALL_CONFIG = dict(max_len=6, max_bag=2, embedding_dim=8, text_filters=4, grid_filters=(3, 3),
                    coverage_hidden=5, hidden=8, top_terms=3, dropout=0.5)
TOLERANCE = 1e-3
STEP = 1e-4
MIN_MARGIN = 2e-3
MAX_ELEMENTS = 24


def _uniform(rng, *shape):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


def _lengths_mask(rng, n, L):
    lengths = rng.integers(1, L + 1, size=n)
    return (np.arange(L)[None, :] < lengths[:, None]).astype(np.int8)


def _away_from_zero(rng, *shape, gap=0.05):
    x = rng.uniform(-1, 1, size=shape)
    return Tensor(np.sign(x) * (gap + (1 - gap) * np.abs(x)), requires_grad=True)


def op_cases():
    """``name -> factory(rng) -> (fn, inputs)`` for each differentiable op."""

    def matmul(rng):
        return ops.matmul, [_uniform(rng, 3, 4), _uniform(rng, 4, 2)]

    def batched_matmul(rng):
        return ops.matmul, [_uniform(rng, 2, 3, 4), _uniform(rng, 2, 4, 5)]

    def conv_text(rng):
        mask = _lengths_mask(rng, 2, 5)
        return (lambda x, k, b: ops.conv_text(x, k, b, mask),
                [_uniform(rng, 2, 5, 4), _uniform(rng, 3, 3, 4), _uniform(rng, 3)])

    def conv_grid(rng):
        rm, cm = _lengths_mask(rng, 2, 8), _lengths_mask(rng, 2, 8)
        return (lambda m, k1, b1, k2, b2: ops.conv_grid(m, [(k1, b1), (k2, b2)], rm, cm),
                [_uniform(rng, 2, 8, 8), _uniform(rng, 3, 1, 3, 3), _uniform(rng, 3),
                 _uniform(rng, 2, 3, 3, 3), _uniform(rng, 2)])

    def masked_max_pool(rng):
        mask = _lengths_mask(rng, 3, 7)
        return (lambda x: ops.masked_max_pool(x, mask)), [_uniform(rng, 3, 7, 3)]

    def masked_mean_pool(rng):
        mask = _lengths_mask(rng, 3, 7)
        return (lambda x: ops.masked_mean_pool(x, mask)), [_uniform(rng, 3, 7, 3)]

    def masked_softmax(rng):
        mask = _lengths_mask(rng, 3, 6)
        return (lambda x: ops.masked_softmax(x, mask)), [_uniform(rng, 3, 6)]

    def relu(rng):
        return ops.relu, [_away_from_zero(rng, 4, 5)]

    def dropout(rng):
        seed = int(rng.integers(1 << 31))
        return (lambda x: ops.dropout(x, 0.5, True, np.random.default_rng(seed))), [_uniform(rng, 4, 6)]

    def cross_entropy(rng):
        labels = rng.integers(0, 2, size=5)
        return (lambda z: ops.cross_entropy(z, labels)), [_uniform(rng, 5, 2)]

    def linear(rng):
        return ops.linear, [_uniform(rng, 2, 3, 4), _uniform(rng, 4, 5), _uniform(rng, 5)]

    def embedding(rng):
        ids = rng.integers(1, 6, size=(2, 4))
        return (lambda t: ops.embedding(t, ids)), [_uniform(rng, 6, 3)]

    def elementwise(rng):
        return (lambda a, b: ops.mul(ops.sub(a, b), ops.add(a, b))), [_uniform(rng, 3, 4), _uniform(rng, 3, 4)]

    def gather_scatter(rng):
        return (lambda x: ops.scatter_rows(ops.take(x, [0, 2, 2, 1]), [4, 0, 2, 3], 6)), [_uniform(rng, 3, 4)]

    return {
        "matmul": matmul, "matmul_batched": batched_matmul, "conv_text": conv_text,
        "conv_grid": conv_grid, "masked_max_pool": masked_max_pool,
        "masked_mean_pool": masked_mean_pool, "masked_softmax": masked_softmax, "relu": relu,
        "dropout": dropout, "cross_entropy": cross_entropy, "linear": linear,
        "embedding": embedding, "add_sub_mul": elementwise, "take_scatter": gather_scatter,
    }


def random_batch(rng, config: ModelConfig, n=3, vocab_size=12):
    L, nb = config.max_len, config.max_bag
    q_mask = _lengths_mask(rng, n, L)
    q_ids = rng.integers(2, vocab_size, size=(n, L)) * q_mask
    slots = rng.integers(1, nb + 1, size=n)
    slot_mask = (np.arange(nb)[None, :] < slots[:, None]).astype(np.int8)
    b_mask = _lengths_mask(rng, n * nb, L).reshape(n, nb, L) * slot_mask[:, :, None]
    b_ids = rng.integers(2, vocab_size, size=(n, nb, L)) * b_mask
    br_mask = _lengths_mask(rng, n, L)
    br_ids = rng.integers(2, vocab_size, size=(n, L)) * br_mask
    return Batch(q_ids, q_mask, b_ids, b_mask, slot_mask, br_ids, br_mask)


def model_case(variant="qbm", vocab_size=12):
    config = ModelConfig(variant=variant, **SMALL_CONFIG)

    def factory(rng):
        batch = random_batch(rng, config, vocab_size=vocab_size)
        labels = rng.integers(0, 2, size=len(batch))
        params = init_params(config, vocab_size, rng, dtype=np.float64)
        for p in params.values():
            p.data[...] = rng.uniform(-1, 1, size=p.shape)
        params["embedding"].data[0] = 0
        names = list(params)
        seed = int(rng.integers(1 << 31))

        def fn(*tensors):
            logits = forward_variant(dict(zip(names, tensors)), config, batch, training=True,
                                     rng=np.random.default_rng(seed))
            return ops.cross_entropy(logits, labels)

        return fn, list(params.values())

    return factory


def _checked_point(factory, rng, attempts=200):
    """Draw points until one sits clear of kinks and ties; keep the best otherwise."""
    best = None
    for _ in range(attempts):
        fn, inputs = factory(rng)
        margin = kink_margin(fn, inputs)
        if margin >= MIN_MARGIN:
            return fn, inputs, margin
        if best is None or margin > best[2]:
            best = (fn, inputs, margin)
    return best


def gradient_suite(seed=0, points=10, include_model=True):
    """Rows of ``(name, max relative error, seconds)`` over ``points`` random points each."""
    rng = np.random.default_rng(seed)
    cases = dict(op_cases())
    if include_model:
        cases["qbm_forward"] = model_case("qbm")
    rows = []
    for name, factory in cases.items():
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(points):
            fn, inputs, _ = _checked_point(factory, rng)
            err = grad_check(fn, inputs, step=STEP, max_elements=MAX_ELEMENTS,
                             seed=int(rng.integers(1 << 31)))
            worst = max(worst, err)
        rows.append((name, worst, time.perf_counter() - t0))
    return rows
