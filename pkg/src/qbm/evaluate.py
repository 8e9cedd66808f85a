"""Ranking evaluation over multi-candidate test instances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import CapabilityError, ConfigurationError, InvalidInstanceError
from .text import UNK

METRIC_COLUMNS = ("MRR", "R10@1", "R10@2", "R10@5", "R2@1")


@dataclass
class RankedInstance:
    """Candidates sorted by descending score; ``order`` holds original indices."""

    query_id: str
    order: list
    scores: list
    positive: int
    bag_ids: list = None

    @property
    def rank(self):
        """1-based rank of the positive candidate."""
        return self.order.index(self.positive) + 1

    def scores_by_index(self):
        out = [0.0] * len(self.order)
        for i, s in zip(self.order, self.scores):
            out[i] = s
        return out


def stable_rank(scores):
    """Indices sorted by descending score, ties kept in input order."""
    scores = np.asarray(scores, dtype=np.float64)
    return [int(i) for i in np.argsort(-scores, kind="stable")]


def rank_scores(query_id, scores, positive, bag_ids=None):
    order = stable_rank(scores)
    return RankedInstance(query_id, order, [float(scores[i]) for i in order], positive, bag_ids)


def rank_candidates(model, instance, n_candidates=10):
    """Score every candidate bag of ``instance`` with ``model.predict_proba`` and rank them."""
    if n_candidates is not None and len(instance.candidates) != n_candidates:
        raise InvalidInstanceError(
            f"query {instance.query_id}: expected {n_candidates} candidates, got {len(instance.candidates)}")
    X = [(instance.query, bag.questions) for bag in instance.candidates]
    scores = np.asarray(model.predict_proba(X))[:, 1]
    return rank_scores(instance.query_id, scores, instance.label_index,
                       [bag.bag_id for bag in instance.candidates])


def rank_all(model, instances, n_candidates=10):
    """Rank many instances with one batched ``predict_proba`` call."""
    X, spans = [], []
    for inst in instances:
        if n_candidates is not None and len(inst.candidates) != n_candidates:
            raise InvalidInstanceError(
                f"query {inst.query_id}: expected {n_candidates} candidates, got {len(inst.candidates)}")
        spans.append((len(X), len(inst.candidates)))
        X.extend((inst.query, bag.questions) for bag in inst.candidates)
    scores = np.asarray(model.predict_proba(X))[:, 1] if X else np.zeros(0)
    return [rank_scores(inst.query_id, scores[s:s + n], inst.label_index,
                        [bag.bag_id for bag in inst.candidates])
            for inst, (s, n) in zip(instances, spans)]


def mrr(ranked):
    if not ranked:
        return 0.0
    return float(np.mean([1.0 / r.rank for r in ranked]))


def subset_rank(ranked: RankedInstance, n):
    """Rank of the positive among itself plus the first ``n - 1`` negatives in stored order."""
    scores = ranked.scores_by_index()
    negatives = [i for i in range(len(scores)) if i != ranked.positive][:n - 1]
    keep = sorted([ranked.positive] + negatives)
    order = stable_rank([scores[i] for i in keep])
    return order.index(keep.index(ranked.positive)) + 1


def recall_at(ranked, n, k):
    """R_n@k: share of instances whose positive is in the top ``k`` of ``n`` candidates."""
    if k > n:
        raise ConfigurationError(f"R_n@k needs k <= n, got n={n}, k={k}")
    if not ranked:
        return 0.0
    hits = []
    for r in ranked:
        if n > len(r.order):
            raise ConfigurationError(f"R_{n}@{k} needs {n} candidates, instance has {len(r.order)}")
        rank = r.rank if n == len(r.order) else subset_rank(r, n)
        hits.append(rank <= k)
    return float(np.mean(hits))


def metric_row(ranked):
    return (mrr(ranked), recall_at(ranked, 10, 1), recall_at(ranked, 10, 2),
            recall_at(ranked, 10, 5), recall_at(ranked, 2, 1))


def ablation_report(models, instances):
    """One metrics row per named model, all on the same instances.

    ``models`` maps a row name to anything with ``predict_proba``.
    """
    rows = []
    for name, model in models.items():
        if model is None:
            raise CapabilityError(f"no model supplied for row {name!r}")
        rows.append((name,) + metric_row(rank_all(model, instances)))
    return rows


def format_report(rows):
    lines = ["\t".join(("model",) + METRIC_COLUMNS)]
    for name, *values in rows:
        lines.append("\t".join([name] + [f"{v:.4f}" for v in values]))
    return "\n".join(lines) + "\n"


def inspect_weights(model, tokens):
    """``(token, e, in_vocab)`` rows for unique ``tokens`` plus the vocabulary average.

    Tokens missing from the vocabulary are scored as UNK.
    """
    network = model.network_
    if not network.config.has_coverage_mlp:
        raise CapabilityError(f"variant {network.config.variant} has no coverage weighting")
    unique = list(dict.fromkeys(t.lower() for t in tokens))
    weights = model.coverage_weights(unique)
    rows = [(t, float(w), t in network.vocab and t != UNK) for t, w in zip(unique, weights)]
    return rows, model.vocabulary_average_weight()


class LabelOracle:
    """Scores 1.0 for positive candidates, 0.0 otherwise (evaluation test hook)."""

    def __init__(self, instances):
        self.lookup = {}
        for inst in instances:
            for i, bag in enumerate(inst.candidates):
                self.lookup[(inst.query, bag.questions)] = float(i == inst.label_index)

    def predict_proba(self, X):
        p = np.array([self.lookup[(q, tuple(b))] for q, b in X])
        return np.stack([1 - p, p], axis=1)
