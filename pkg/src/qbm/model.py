"""Query-bag matching network and its baselines.

Shapes used throughout: ``N`` instances per batch, ``n`` bag slots,
``R`` real (non-padding) bag questions across the batch, ``L`` tokens,
``D`` embedding size.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, ops
from .exceptions import (
    CapabilityError,
    ConfigurationError,
    DegenerateInputError,
    InvalidInstanceError,
)
from .lexical import STOPWORDS, InvertedIndex, top_terms
from .text import PAD_ID, Vocabulary, encode, tokenize

VARIANTS = ("base", "base+mc", "base+br", "base+br_nocov", "qbm", "qq", "bagcon")


@dataclass
class ModelConfig:
    variant: str = "qbm"
    max_len: int = 20
    max_bag: int = 5
    embedding_dim: int = 300
    text_filters: int = 128
    text_width: int = 3
    grid_filters: tuple = (32, 32)
    grid_kernel: int = 3
    coverage_hidden: int = 64
    hidden: int = 256
    dropout: float = 0.5
    top_terms: int = 10
    bagcon_len: int = 100

    def __post_init__(self):
        self.grid_filters = tuple(int(f) for f in self.grid_filters)
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        sizes = dict(max_len=self.max_len, max_bag=self.max_bag, embedding_dim=self.embedding_dim,
                     text_filters=self.text_filters, text_width=self.text_width,
                     grid_kernel=self.grid_kernel, coverage_hidden=self.coverage_hidden,
                     hidden=self.hidden, top_terms=self.top_terms, bagcon_len=self.bagcon_len)
        for name, value in sizes.items():
            if int(value) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if not self.grid_filters or min(self.grid_filters) <= 0:
            raise ConfigurationError(f"grid_filters must be positive, got {self.grid_filters}")
        if self.text_width % 2 == 0 or self.grid_kernel % 2 == 0:
            raise ConfigurationError("convolution widths must be odd")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.max_len >> len(self.grid_filters) == 0:
            raise ConfigurationError(
                f"max_len {self.max_len} too short for {len(self.grid_filters)} pooling stages")

    # variant wiring
    @property
    def uses_mc(self):
        return self.variant in ("base+mc", "qbm")

    @property
    def uses_br(self):
        return self.variant in ("base+br", "base+br_nocov", "qbm")

    @property
    def br_coverage(self):
        return self.variant in ("base+br", "qbm")

    @property
    def has_coverage_mlp(self):
        return self.uses_mc or self.br_coverage

    @property
    def pair_only(self):
        return self.variant == "qq"

    @property
    def text_len(self):
        """Token length of the question side (and of the padded query for Bag-Con)."""
        return self.bagcon_len if self.variant == "bagcon" else self.max_len

    def grid_dim(self, side):
        for _ in self.grid_filters:
            side //= 2
        return self.grid_filters[-1] * side * side

    def pair_dim(self, side=None):
        return 4 * self.text_filters + self.grid_dim(side or self.max_len)

    def feature_dim(self):
        L, n = self.max_len, self.max_bag
        if self.variant == "qq":
            return self.pair_dim()
        if self.variant == "bagcon":
            return self.pair_dim(self.bagcon_len)
        dim = 2 * self.pair_dim()
        if self.uses_mc:
            dim += L + n * L + 2
        if self.uses_br:
            dim += self.pair_dim()
        if self.br_coverage:
            dim += 2 * L + 2
        return dim

    def to_dict(self):
        d = asdict(self)
        d["grid_filters"] = list(self.grid_filters)
        return d


def param_shapes(config: ModelConfig, vocab_size: int):
    """Ordered ``name -> shape`` for every parameter of the configured variant."""
    D = config.embedding_dim
    shapes = {
        "embedding": (vocab_size, D),
        "text_kernels": (config.text_filters, config.text_width, D),
        "text_bias": (config.text_filters,),
    }
    channels = 1
    for i, f in enumerate(config.grid_filters):
        shapes[f"grid{i}_kernels"] = (f, channels, config.grid_kernel, config.grid_kernel)
        shapes[f"grid{i}_bias"] = (f,)
        channels = f
    if config.has_coverage_mlp:
        shapes["coverage_w1"] = (D, config.coverage_hidden)
        shapes["coverage_b1"] = (config.coverage_hidden,)
        shapes["coverage_w2"] = (config.coverage_hidden, 1)
        shapes["coverage_b2"] = (1,)
    shapes["head_w1"] = (config.feature_dim(), config.hidden)
    shapes["head_b1"] = (config.hidden,)
    shapes["head_w2"] = (config.hidden, 2)
    shapes["head_b2"] = (2,)
    return shapes


def param_count(config: ModelConfig, vocab_size: int):
    return int(sum(np.prod(s) for s in param_shapes(config, vocab_size).values()))


def init_params(config: ModelConfig, vocab_size: int, rng, embeddings=None, dtype=np.float32):
    params = {}
    for name, shape in param_shapes(config, vocab_size).items():
        if name == "embedding":
            if embeddings is None:
                value = rng.uniform(-0.25, 0.25, size=shape)
                value[PAD_ID] = 0
            else:
                value = np.asarray(embeddings)
                if value.shape != shape:
                    raise ConfigurationError(f"embedding table {value.shape} does not match {shape}")
        elif name.endswith(("bias", "_b1", "_b2")):
            value = np.zeros(shape)
        else:
            if len(shape) == 2:
                fan_in, fan_out = shape
            else:
                field_size = int(np.prod(shape[2:]))
                fan_in, fan_out = shape[1] * field_size, shape[0] * field_size
                if name == "text_kernels":
                    fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(np.array(value, dtype=dtype), requires_grad=True)
    return params


# --------------------------------------------------------------------------
# batch encoding


@dataclass
class Batch:
    q_ids: np.ndarray
    q_mask: np.ndarray
    b_ids: np.ndarray
    b_mask: np.ndarray
    slot_mask: np.ndarray
    br_ids: np.ndarray = None
    br_mask: np.ndarray = None

    def __len__(self):
        return len(self.q_ids)

    @property
    def rows(self):
        """Flat ``N * n`` positions of the real bag questions."""
        return np.flatnonzero(self.slot_mask.reshape(-1))

    @property
    def owner(self):
        return self.rows // self.slot_mask.shape[1]


# --------------------------------------------------------------------------
# building blocks


def cross_attention(q_emb: Tensor, b_emb: Tensor, q_mask, b_mask) -> Tensor:
    """Dot products of query and question word embeddings, zero outside the masks.

    ``q_emb`` is ``[R, L, D]``, ``b_emb`` is ``[R, Lb, D]``; result ``[R, L, Lb]``.
    """
    q_mask, b_mask = np.asarray(q_mask), np.asarray(b_mask)
    if not q_mask.any(axis=-1).all() or not b_mask.any(axis=-1).all():
        raise DegenerateInputError("cross attention over an empty query or question")
    m = ops.matmul(q_emb, ops.transpose(b_emb))
    cells = q_mask[:, :, None] * b_mask[:, None, :]
    return ops.mask_mul(m, cells)


def encode_text(params, emb: Tensor, mask) -> Tensor:
    """Shared sentence CNN: convolution then max over valid positions."""
    feats = ops.conv_text(emb, params["text_kernels"], params["text_bias"], mask)
    return ops.masked_max_pool(feats, mask)


def grid_stages(params, config):
    return [(params[f"grid{i}_kernels"], params[f"grid{i}_bias"]) for i in range(len(config.grid_filters))]


def hcnn_pair(params, config, q_emb, q_mask, b_emb, b_mask, h1=None, m=None):
    """Pair representation ``[h1; h2; h1 - h2; h1 * h2; hm]`` for aligned rows.

    Returns ``(r, m)`` where ``m`` is the cross-attention matrix, reused by
    the coverage features.  ``h1`` may be passed in when the query encoding
    is already available.
    """
    if h1 is None:
        h1 = encode_text(params, q_emb, q_mask)
    h2 = encode_text(params, b_emb, b_mask)
    if m is None:
        m = cross_attention(q_emb, b_emb, q_mask, b_mask)
    hm = ops.conv_grid(m, grid_stages(params, config), q_mask, b_mask)
    r = ops.concat([h1, h2, ops.sub(h1, h2), ops.mul(h1, h2), hm], axis=-1)
    return r, m


def aggregate_bag(r_slots: Tensor, slot_mask) -> Tensor:
    """``[max over real questions; mean over real questions]`` of ``[N, n, K]`` reps."""
    slot_mask = np.asarray(slot_mask)
    if not slot_mask.any(axis=-1).all():
        raise DegenerateInputError("bag has no questions")
    mask = slot_mask[..., None]
    return ops.concat([ops.masked_max(r_slots, mask, axis=1),
                       ops.masked_mean(r_slots, mask, axis=1)], axis=-1)


def question_coverage(m: Tensor, b_mask) -> Tensor:
    """Per query word, its best match over the valid words of one question: ``[R, L]``."""
    return ops.masked_max(m, np.asarray(b_mask)[:, None, :], axis=2)


def bag_to_query_coverage(m: Tensor, q_mask_rows, b_mask, rows, slot_mask) -> Tensor:
    """Max over the bag's questions of each query word's best match: ``[N, L]``."""
    N, n = slot_mask.shape
    c_i = ops.mask_mul(question_coverage(m, b_mask), q_mask_rows)
    slots = ops.reshape(ops.scatter_rows(c_i, rows, N * n), (N, n, -1))
    return ops.masked_max(slots, np.asarray(slot_mask)[:, :, None], axis=1)


def query_to_bag_coverage(m: Tensor, q_mask_rows, b_mask, rows, slot_mask) -> Tensor:
    """Per bag word, its best match over the query, concatenated by slot: ``[N, n * Lb]``."""
    N, n = slot_mask.shape
    c = ops.mask_mul(ops.masked_max(m, np.asarray(q_mask_rows)[:, :, None], axis=1), b_mask)
    return ops.reshape(ops.scatter_rows(c, rows, N * n), (N, -1))


def coverage_logits(params, emb: Tensor) -> Tensor:
    """Scalar importance score per token embedding (``[..., D]`` -> ``[...]``)."""
    h = ops.relu(ops.linear(emb, params["coverage_w1"], params["coverage_b1"]))
    e = ops.linear(h, params["coverage_w2"], params["coverage_b2"])
    return ops.reshape(e, e.shape[:-1])


def coverage_weighting(params, c: Tensor, emb: Tensor, mask):
    """Attention-weighted coverage and its sum: ``(c * softmax(e), sum)``."""
    weights = ops.masked_softmax(coverage_logits(params, emb), mask)
    weighted = ops.mul(weights, c)
    return weighted, ops.sum(weighted, axis=-1, keepdims=True, order_free=True)


def head(params, config, features: Tensor, training=False, rng=None) -> Tensor:
    x = ops.dropout(features, config.dropout, training, rng)
    x = ops.relu(ops.linear(x, params["head_w1"], params["head_b1"]))
    return ops.linear(x, params["head_w2"], params["head_b2"])


# --------------------------------------------------------------------------
# full forward


def forward_features(params, config: ModelConfig, batch: Batch):
    """Variant-specific feature vector ``[N, feature_dim]`` plus named parts."""
    emb = params["embedding"]
    N, n = batch.slot_mask.shape
    rows, owner = batch.rows, batch.owner
    q_mask = batch.q_mask
    if not q_mask.any(axis=-1).all():
        raise DegenerateInputError("query has no valid tokens")

    q_emb = ops.embedding(emb, batch.q_ids)
    b_ids = batch.b_ids.reshape(N * n, -1)[rows]
    b_mask = batch.b_mask.reshape(N * n, -1)[rows]
    b_emb = ops.embedding(emb, b_ids)
    h1 = encode_text(params, q_emb, q_mask)
    q_emb_rows = ops.take(q_emb, owner)
    q_mask_rows = q_mask[owner]
    r, m = hcnn_pair(params, config, q_emb_rows, q_mask_rows, b_emb, b_mask, h1=ops.take(h1, owner))
    parts = {}

    if config.variant in ("qq", "bagcon"):
        # one question per instance
        parts["r"] = r
        return r, parts

    r_slots = ops.reshape(ops.scatter_rows(r, rows, N * n), (N, n, -1))
    r_p = aggregate_bag(r_slots, batch.slot_mask)
    feats = [r_p]
    parts["r_p"] = r_p

    if config.uses_mc:
        c_q = bag_to_query_coverage(m, q_mask_rows, b_mask, rows, batch.slot_mask)
        c_b = query_to_bag_coverage(m, q_mask_rows, b_mask, rows, batch.slot_mask)
        bag_emb = ops.reshape(ops.scatter_rows(b_emb, rows, N * n), (N, n * b_ids.shape[1], -1))
        cq_bar, cq_sum = coverage_weighting(params, c_q, q_emb, q_mask)
        cb_bar, cb_sum = coverage_weighting(params, c_b, bag_emb, batch.b_mask.reshape(N, -1))
        feats += [cq_bar, cb_bar, cq_sum, cb_sum]
        parts.update(c_q=c_q, c_b=c_b, cq_bar=cq_bar, cb_bar=cb_bar, cq_sum=cq_sum, cb_sum=cb_sum)

    if config.uses_br:
        br_emb = ops.embedding(emb, batch.br_ids)
        r_r, m_r = hcnn_pair(params, config, q_emb, q_mask, br_emb, batch.br_mask, h1=h1)
        feats.append(r_r)
        parts["r_r"] = r_r
        if config.br_coverage:
            cq_r = ops.mask_mul(question_coverage(m_r, batch.br_mask), q_mask)
            cb_r = ops.mask_mul(ops.masked_max(m_r, q_mask[:, :, None], axis=1), batch.br_mask)
            cq_r_bar, cq_r_sum = coverage_weighting(params, cq_r, q_emb, q_mask)
            cb_r_bar, cb_r_sum = coverage_weighting(params, cb_r, br_emb, batch.br_mask)
            feats += [cq_r_bar, cb_r_bar, cq_r_sum, cb_r_sum]
            parts.update(br_c_q=cq_r, br_c_b=cb_r)

    return ops.concat(feats, axis=-1), parts


def forward_variant(params, config: ModelConfig, batch: Batch, training=False, rng=None) -> Tensor:
    """Two-class logits ``[N, 2]``."""
    features, _ = forward_features(params, config, batch)
    return head(params, config, features, training, rng)


def softmax_np(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# network: config + vocabulary + parameters + encoding


class QBMNetwork:
    """Everything needed to turn raw ``(query, bag)`` samples into logits."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, params, index=None,
                 stopwords=STOPWORDS):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.index = index
        self.stopwords = frozenset(stopwords)
        if config.uses_br and index is None:
            raise ConfigurationError(f"variant {config.variant} needs term statistics")
        self._terms_cache = {}

    @property
    def param_list(self):
        return list(self.params.values())

    # ---- encoding
    def bag_terms(self, questions):
        """Pseudo-question tokens for the bag representation."""
        key = tuple(questions)
        cached = self._terms_cache.get(key)
        if cached is not None:
            return cached
        terms = top_terms(questions, self.index, self.config.top_terms, self.stopwords, self.vocab)
        if not terms:
            counts = Counter(t for q in questions for t in tokenize(q) if t not in self.stopwords)
            if not counts:
                raise InvalidInstanceError(f"bag has no non-stopword token: {list(questions)!r}")
            terms = [min(counts, key=lambda t: (-counts[t], t))]
        self._terms_cache[key] = terms
        return terms

    def encode(self, X) -> Batch:
        cfg = self.config
        N = len(X)
        n = 1 if cfg.variant in ("qq", "bagcon") else cfg.max_bag
        Lb = cfg.text_len
        Lq = Lb if cfg.variant == "bagcon" else cfg.max_len
        q_ids = np.zeros((N, Lq), dtype=np.int64)
        q_mask = np.zeros((N, Lq), dtype=np.int8)
        b_ids = np.zeros((N, n, Lb), dtype=np.int64)
        b_mask = np.zeros((N, n, Lb), dtype=np.int8)
        slot_mask = np.zeros((N, n), dtype=np.int8)
        br_ids = br_mask = None
        if cfg.uses_br:
            br_ids = np.zeros((N, cfg.max_len), dtype=np.int64)
            br_mask = np.zeros((N, cfg.max_len), dtype=np.int8)
        for i, (query, bag) in enumerate(X):
            q = encode(query, self.vocab, cfg.max_len)
            if q.empty:
                raise DegenerateInputError(f"sample {i}: query {query!r} has no tokens")
            q_ids[i, :cfg.max_len], q_mask[i, :cfg.max_len] = q.ids, q.mask
            questions = list(bag)[:cfg.max_bag]
            if not questions:
                raise DegenerateInputError(f"sample {i}: empty bag")
            if cfg.variant == "bagcon":
                texts = [" ".join(questions)]
            elif cfg.variant == "qq":
                if len(questions) != 1:
                    raise ConfigurationError("the pair model scores one question at a time")
                texts = questions
            else:
                texts = questions
            for j, text in enumerate(texts):
                enc = encode(text, self.vocab, Lb)
                if enc.empty:
                    raise DegenerateInputError(f"sample {i}: bag question {text!r} has no tokens")
                b_ids[i, j], b_mask[i, j], slot_mask[i, j] = enc.ids, enc.mask, 1
            if cfg.uses_br:
                enc = encode(self.bag_terms(questions), self.vocab, cfg.max_len)
                br_ids[i], br_mask[i] = enc.ids, enc.mask
        return Batch(q_ids, q_mask, b_ids, b_mask, slot_mask, br_ids, br_mask)

    # ---- forward
    def logits(self, batch: Batch, training=False, rng=None) -> Tensor:
        return forward_variant(self.params, self.config, batch, training, rng)

    def features(self, batch: Batch):
        return forward_features(self.params, self.config, batch)

    def predict_proba(self, X, batch_size=256, qq_pool="max"):
        """``[len(X), 2]`` class probabilities in eval mode."""
        if self.config.pair_only:
            return self._pooled_pair_proba(X, batch_size, qq_pool)
        out = []
        for start in range(0, len(X), batch_size):
            batch = self.encode(X[start:start + batch_size])
            out.append(softmax_np(self.logits(batch).data.astype(np.float64)))
        return np.concatenate(out) if out else np.zeros((0, 2))

    def _pooled_pair_proba(self, X, batch_size, qq_pool):
        if qq_pool not in ("max", "mean"):
            raise ConfigurationError(f"qq_pool must be 'max' or 'mean', got {qq_pool!r}")
        pairs, owner = [], []
        for i, (query, bag) in enumerate(X):
            questions = list(bag)[:self.config.max_bag]
            if not questions:
                raise DegenerateInputError(f"sample {i}: empty bag")
            for q in questions:
                pairs.append((query, (q,)))
                owner.append(i)
        probs = []
        for start in range(0, len(pairs), batch_size):
            batch = self.encode(pairs[start:start + batch_size])
            probs.append(softmax_np(self.logits(batch).data.astype(np.float64))[:, 1])
        p1 = np.concatenate(probs) if probs else np.zeros(0)
        owner = np.asarray(owner)
        scores = np.zeros(len(X))
        for i in range(len(X)):
            vals = p1[owner == i]
            scores[i] = vals.max() if qq_pool == "max" else vals.mean()
        return np.stack([1 - scores, scores], axis=1)

    def coverage_weights(self, token_ids):
        """Raw importance score ``e`` for each token id."""
        if not self.config.has_coverage_mlp:
            raise CapabilityError(f"variant {self.config.variant} has no coverage weighting")
        emb = Tensor(self.params["embedding"].data[np.asarray(token_ids, dtype=np.intp)])
        return coverage_logits(self.params, emb).data.astype(np.float64)


def training_samples(config: ModelConfig, X, y):
    """Samples the network trains on: query-question pairs for the pair model."""
    if not config.pair_only:
        return list(X), np.asarray(y)
    pairs, labels = [], []
    for (query, bag), label in zip(X, y):
        for q in list(bag)[:config.max_bag]:
            pairs.append((query, (q,)))
            labels.append(label)
    return pairs, np.asarray(labels)
