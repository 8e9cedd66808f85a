"""Seeded synthetic duplicate-question corpora.

Each bag is built around five concepts: two drawn from a small shared
"head" pool (so lexical retrieval finds convincing wrong bags) and three
bag-specific ones.  Every concept has several surface forms; paraphrases
substitute forms at random and wrap the content words in stopword frames.
"""
from __future__ import annotations

import numpy as np

from .dataset import PairRecord

_ONSETS = "b c d f g h j k l m n p r s t v z br dr kl pr st tr".split()
_VOWELS = "a e i o u ai ou".split()

FRAMES = [
    "how do i {0} the {1} {2} of {3} {4}",
    "what is the {0} {1} for {2} {3} {4}",
    "why does my {0} {1} not {2} with {3} {4}",
    "can i {0} a {1} {2} to {3} {4}",
    "where should i {0} {1} {2} and {3} {4}",
    "is it {0} to {1} the {2} in {3} {4}",
    "{0} {1} {2} {3} {4} ?",
]


def _lexicon(n_words, rng):
    words, seen = [], set()
    while len(words) < n_words:
        n_syl = rng.integers(2, 4)
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def paraphrase_bags(n_bags=500, bag_size=(4, 7), forms=3, n_head=30, substitution=0.3,
                    seed=0):
    """Return ``n_bags`` lists of distinct paraphrase strings."""
    rng = np.random.default_rng(seed)
    n_specific = max(3 * n_bags // 2, 30)
    lex = _lexicon((n_head + n_specific) * forms, rng)
    concepts = [lex[i * forms:(i + 1) * forms] for i in range(n_head + n_specific)]
    head, specific = concepts[:n_head], concepts[n_head:]
    used, bags = set(), []
    for _ in range(n_bags):
        picks = ([head[i] for i in rng.choice(n_head, 2, replace=False)]
                 + [specific[i] for i in rng.choice(len(specific), 3, replace=False)])
        size = int(rng.integers(bag_size[0], bag_size[1] + 1))
        questions, attempts = [], 0
        while len(questions) < size and attempts < 50 * size:
            attempts += 1
            words = [c[0] if rng.random() >= substitution else c[rng.integers(1, forms)]
                     for c in picks]
            if rng.random() < 0.3:
                rng.shuffle(words)
            text = FRAMES[rng.integers(len(FRAMES))].format(*words)
            if text not in used:
                used.add(text)
                questions.append(text)
        bags.append(questions)
    return bags


def paraphrase_pairs(n_bags=500, seed=0, negative_pairs=None, **kwargs):
    """Duplicate-pair records whose union-find components are the generated bags."""
    rng = np.random.default_rng(seed + 1)
    bags = paraphrase_bags(n_bags, seed=seed, **kwargs)
    pairs = []
    for qs in bags:
        order = rng.permutation(len(qs))
        for a, b in zip(order[:-1], order[1:]):
            pairs.append(PairRecord(qs[a], qs[b], True))
    n_neg = len(bags) if negative_pairs is None else negative_pairs
    for _ in range(n_neg):
        i, j = rng.choice(len(bags), 2, replace=False)
        pairs.append(PairRecord(bags[i][rng.integers(len(bags[i]))],
                                bags[j][rng.integers(len(bags[j]))], False))
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]
