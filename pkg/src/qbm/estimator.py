"""scikit-learn compatible front end for the query-bag matcher."""
from __future__ import annotations

import logging
from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_labels, check_query_bag_X
from .autodiff import Tensor
from .lexical import STOPWORDS, InvertedIndex, load_stopwords
from .model import ModelConfig, QBMNetwork, init_params, param_count
from .text import PAD_ID, UNK_ID, Vocabulary, load_embeddings
from .trainer import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

logger = logging.getLogger(__name__)

_MODEL_FIELDS = [f.name for f in fields(ModelConfig)]
_TRAIN_FIELDS = ("lr", "batch_size", "max_epochs", "patience", "min_count", "qq_pool", "dtype")


class QBMClassifier(ClassifierMixin, BaseEstimator):
    """Predict whether a query asks the same question as a bag of paraphrases.

    ``X`` is a sequence of ``(query, bag)`` pairs where ``bag`` is a
    sequence of question strings; ``y`` holds 0/1 match labels.

    ``variant`` selects the architecture: ``"base"`` (pooled pair
    matching), ``"base+mc"`` (adds mutual coverage), ``"base+br"`` and
    ``"base+br_nocov"`` (add the keyword bag representation with or without
    its coverage), ``"qbm"`` (both extensions), ``"qq"`` (a query-question
    model whose bag score is the max or mean over questions, see
    ``qq_pool``) and ``"bagcon"`` (the bag concatenated into one long
    question).

    ``embeddings`` is an optional path to a whitespace-separated word-vector
    file; ``stopwords`` is ``None`` for the built-in English list, a path,
    or an iterable of tokens.  ``log_path`` receives one tab-separated line
    per epoch: ``epoch loss train_acc val_P val_R val_F1 seconds``.
    """

    def __init__(self, variant="qbm", max_len=20, max_bag=5, embedding_dim=300,
                 text_filters=128, text_width=3, grid_filters=(32, 32), grid_kernel=3,
                 coverage_hidden=64, hidden=256, dropout=0.5, top_terms=10, bagcon_len=100,
                 lr=1e-4, batch_size=32, max_epochs=20, patience=5, min_count=1,
                 embeddings=None, stopwords=None, qq_pool="max", dtype="float32", seed=0,
                 log_path=None):
        self.variant = variant
        self.max_len = max_len
        self.max_bag = max_bag
        self.embedding_dim = embedding_dim
        self.text_filters = text_filters
        self.text_width = text_width
        self.grid_filters = grid_filters
        self.grid_kernel = grid_kernel
        self.coverage_hidden = coverage_hidden
        self.hidden = hidden
        self.dropout = dropout
        self.top_terms = top_terms
        self.bagcon_len = bagcon_len
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_count = min_count
        self.embeddings = embeddings
        self.stopwords = stopwords
        self.qq_pool = qq_pool
        self.dtype = dtype
        self.seed = seed
        self.log_path = log_path

    # ------------------------------------------------------------------
    def _model_config(self):
        return ModelConfig(**{name: getattr(self, name) for name in _MODEL_FIELDS})

    def _stopword_set(self):
        if self.stopwords is None:
            return STOPWORDS
        if isinstance(self.stopwords, str):
            return load_stopwords(self.stopwords)
        return frozenset(self.stopwords)

    def init_network(self, X, term_corpus=None):
        """Build vocabulary, term statistics and freshly initialised parameters for ``X``."""
        X = check_query_bag_X(X)
        config = self._model_config()
        texts = [t for query, bag in X for t in (query, *bag)]
        vocab = Vocabulary.build(texts, min_count=self.min_count)
        index = None
        if config.uses_br:
            corpus = term_corpus if term_corpus is not None else sorted({q for _, bag in X for q in bag})
            index = InvertedIndex().fit(corpus)
            index = InvertedIndex.from_stats(index.n_docs, index.df)
        dtype = np.dtype(self.dtype)
        emb = None
        if self.embeddings is not None:
            emb = load_embeddings(self.embeddings, vocab, config.embedding_dim, seed=self.seed, dtype=dtype)
        rng = np.random.default_rng(self.seed)
        params = init_params(config, len(vocab), rng, embeddings=emb, dtype=dtype)
        self.network_ = QBMNetwork(config, vocab, params, index, self._stopword_set())
        self.classes_ = np.array([0, 1])
        self.n_params_ = param_count(config, len(vocab))
        return self

    def fit(self, X, y, X_valid=None, y_valid=None, term_corpus=None):
        """Train on ``(query, bag)`` samples, selecting the epoch with the best validation F1.

        ``term_corpus`` overrides the question collection whose document
        frequencies drive keyword selection for the bag representation.
        """
        X = check_query_bag_X(X)
        y = check_binary_labels(y, len(X))
        if X_valid is not None:
            X_valid = check_query_bag_X(X_valid)
            y_valid = check_binary_labels(y_valid, len(X_valid))
        self.init_network(X, term_corpus)
        cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                          seed=self.seed, patience=self.patience)
        if self.log_path is None:
            result = train(self.network_, X, y, X_valid, y_valid, cfg, qq_pool=self.qq_pool)
        else:
            with open(self.log_path, "w", encoding="utf-8") as log_file:
                result = train(self.network_, X, y, X_valid, y_valid, cfg, log_file=log_file,
                               qq_pool=self.qq_pool)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_f1_ = result.best_f1
        self.optimizer_state_ = result.state
        return self

    # ------------------------------------------------------------------
    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return self.network_.predict_proba(check_query_bag_X(X), qq_pool=self.qq_pool)

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def coverage_weights(self, tokens):
        """Raw coverage-weighting score for each token (unknown tokens score as UNK)."""
        check_is_fitted(self, "network_")
        vocab = self.network_.vocab
        ids = [vocab[t.lower()] for t in tokens]
        return self.network_.coverage_weights(ids)

    def vocabulary_average_weight(self):
        """Mean coverage-weighting score over every real vocabulary entry."""
        check_is_fitted(self, "network_")
        ids = [i for i in range(len(self.network_.vocab)) if i not in (PAD_ID, UNK_ID)]
        return float(np.mean(self.network_.coverage_weights(ids))) if ids else float("nan")

    # ------------------------------------------------------------------
    def to_checkpoint(self):
        check_is_fitted(self, "network_")
        net = self.network_
        stats = None
        if net.index is not None:
            stats = {"n_docs": net.index.n_docs, "df": dict(sorted(net.index.df.items()))}
        extra = {name: getattr(self, name) for name in _TRAIN_FIELDS}
        return Checkpoint(
            config=net.config,
            vocabulary=list(net.vocab.itos),
            params={k: v.data for k, v in net.params.items()},
            adam=getattr(self, "optimizer_state_", None),
            epoch=getattr(self, "best_epoch_", 0),
            val_f1=getattr(self, "best_f1_", 0.0),
            seed=self.seed,
            term_stats=stats,
            stopwords=sorted(net.stopwords),
            extra=extra,
        )

    def save(self, path):
        return save_checkpoint(path, self.to_checkpoint())

    @classmethod
    def from_checkpoint(cls, cp: Checkpoint):
        kwargs = cp.config.to_dict()
        kwargs["grid_filters"] = tuple(kwargs["grid_filters"])
        kwargs.update({k: v for k, v in cp.extra.items() if k in _TRAIN_FIELDS})
        kwargs["dtype"] = "float32"
        est = cls(seed=cp.seed, stopwords=cp.stopwords, **kwargs)
        vocab = Vocabulary(cp.vocabulary[2:])
        index = None
        if cp.term_stats is not None:
            index = InvertedIndex.from_stats(cp.term_stats["n_docs"], cp.term_stats["df"])
        params = {k: Tensor(v, requires_grad=True) for k, v in cp.params.items()}
        est.network_ = QBMNetwork(cp.config, vocab, params, index, frozenset(cp.stopwords or STOPWORDS))
        est.classes_ = np.array([0, 1])
        est.n_params_ = param_count(cp.config, len(vocab))
        est.best_epoch_ = cp.epoch
        est.best_f1_ = cp.val_f1
        est.optimizer_state_ = cp.adam
        return est

    @classmethod
    def load(cls, path):
        return cls.from_checkpoint(load_checkpoint(path))
