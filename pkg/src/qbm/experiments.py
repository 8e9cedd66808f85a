"""Multi-seed ablation runs on a duplicate-question pair corpus.

``ablation_runs`` trains each variant per seed on a fixed-size query subset
and scores every model on that seed's test instances.  The helpers below
turn the runs into majority-vote comparisons and a coverage-weight check.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import build_instances, filter_and_split, group_duplicates, instances_to_xy, read_pairs
from .evaluate import metric_row, rank_all
from .exceptions import DatasetTooSmallError
from .lexical import STOPWORDS

logger = logging.getLogger(__name__)

ABLATION_VARIANTS = ("base", "base+mc", "base+br", "qbm", "bagcon")

# fixed function-word probe list for the coverage-weight comparison
PROBE_STOPWORDS = ("the", "a", "an", "is", "are", "to", "of", "in", "and", "or",
                   "do", "does", "i", "you", "it", "for", "on", "with", "be", "can")

# (better, worse, minimum MRR margin); a zero margin still needs a strict win
COMPARISONS = (
    ("qbm", "base+mc", 0.005),
    ("qbm", "base+br", 0.005),
    ("base+mc", "base", 0.005),
    ("qbm", "bagcon", 0.0),
)


@dataclass
class SeedRun:
    seed: int
    metrics: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)


def query_bags_from_pairs(path, min_size=3):
    qb = filter_and_split(group_duplicates(read_pairs(path)), min_size=min_size)
    if not qb:
        raise DatasetTooSmallError(f"no bag of at least {min_size} questions in {path}")
    return qb


def ablation_runs(query_bags, seeds=(0, 1, 2), n_queries=2000, variants=ABLATION_VARIANTS,
                  sizes=None, **estimator_params):
    """Train every variant for every seed; returns a list of :class:`SeedRun`."""
    from .estimator import QBMClassifier

    if sizes is None:
        test = valid = n_queries // 10
        sizes = (n_queries - valid - test, valid, test)
    if len(query_bags) < sum(sizes):
        raise DatasetTooSmallError(f"need {sum(sizes)} query bags, corpus yields {len(query_bags)}")
    runs = []
    for seed in seeds:
        splits = build_instances(query_bags, sizes=sizes, seed=seed)
        X, y = instances_to_xy(splits["train"])
        Xv, yv = instances_to_xy(splits["valid"])
        run = SeedRun(seed)
        for variant in variants:
            model = QBMClassifier(variant=variant, seed=seed, **estimator_params).fit(X, y, Xv, yv)
            run.metrics[variant] = metric_row(rank_all(model, splits["test"]))
            run.models[variant] = model
            logger.info("seed=%d %s MRR %.4f R10@1 %.4f", seed, variant, *run.metrics[variant][:2])
        runs.append(run)
    return runs


def majority_comparisons(runs, comparisons=COMPARISONS):
    """``(better, worse, margin, wins, passed)`` rows, MRR-based, majority vote over seeds."""
    rows = []
    for better, worse, margin in comparisons:
        wins = 0
        for run in runs:
            diff = run.metrics[better][0] - run.metrics[worse][0]
            wins += diff >= margin if margin > 0 else diff > 0
        rows.append((better, worse, margin, wins, 2 * wins > len(runs)))
    return rows


def high_idf_tokens(model, n=200, stopwords=STOPWORDS):
    """Vocabulary tokens with the highest smoothed IDF, alphabetic and not stopwords."""
    net = model.network_
    index = net.index
    if index is None:
        raise DatasetTooSmallError("model has no term statistics")
    tokens = [t for t in net.vocab.itos[2:] if t.isalpha() and t not in stopwords and t in index.df]
    tokens.sort(key=lambda t: (-index.idf(t), t))
    return tokens[:n]


def coverage_weight_gap(model, probe=PROBE_STOPWORDS, n_content=200):
    """``(mean weight of probe stopwords, mean weight of high-IDF content tokens)``."""
    vocab = model.network_.vocab
    stop = [t for t in probe if t in vocab]
    content = high_idf_tokens(model, n_content)
    if not stop or not content:
        raise DatasetTooSmallError("probe or content token list is empty for this vocabulary")
    return float(np.mean(model.coverage_weights(stop))), float(np.mean(model.coverage_weights(content)))
