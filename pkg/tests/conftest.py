import sys

import numpy as np
import pytest

from qbm import QBMClassifier

SMALL = dict(max_len=8, max_bag=3, embedding_dim=6, text_filters=4, grid_filters=(3, 3),
             coverage_hidden=5, hidden=7, top_terms=4, bagcon_len=24, dtype="float64")

WORDS = ("refund order late parcel ship cost money card bank open account close "
         "password reset login phone number change address email").split()


def toy_samples(n=6, seed=0, bag=(1, 3)):
    rng = np.random.default_rng(seed)

    def sentence():
        return " ".join(rng.choice(WORDS, size=rng.integers(2, 7)))

    return [(sentence(), tuple(sentence() for _ in range(rng.integers(bag[0], bag[1] + 1))))
            for _ in range(n)]


def small_model(variant="qbm", X=None, seed=0, **overrides):
    params = dict(SMALL, **overrides)
    X = X if X is not None else toy_samples(12, seed)
    return QBMClassifier(variant=variant, seed=seed, **params).init_network(X)


@pytest.fixture
def toy():
    return toy_samples()


def pytest_terminal_summary(terminalreporter):
    gate = sys.modules.get("test_acceptance")
    if gate is None or not gate.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(gate.RESULTS):
        terminalreporter.write_line(gate.RESULTS[number])
