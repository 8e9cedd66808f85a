"""TF-IDF inverted index: hard-negative retrieval and bag keyword selection."""
from __future__ import annotations

import math
from collections import Counter, defaultdict

from .text import PAD, UNK, tokenize

# small built-in English list; pass your own set for other languages
STOPWORDS = frozenset("""
a about after all also am an and any are as at be because been before being
between both but by can could did do does doing during each few for from further
had has have having he her here hers him his how i if in into is it its itself
just me more most my no nor not now of off on once only or other our ours out
over own same she should so some such than that the their theirs them then there
these they this those through to too under until up very was we were what when
where which while who whom why will with would you your yours
? , . ! ' " - : ; ( ) /
""".split())


def load_stopwords(path):
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def smoothed_idf(n_docs, df):
    return math.log((n_docs + 1) / (df + 1)) + 1.0


class InvertedIndex:
    """Inverted index over short texts with cosine scoring on TF-IDF vectors.

    ``tf`` is the raw count of a token in a document and
    ``idf = ln((N + 1) / (df + 1)) + 1``.  Document ids are input positions.
    """

    def __init__(self):
        self.postings: dict[str, list[tuple[int, int]]] = {}
        self.df: dict[str, int] = {}
        self.norms: list[float] = []
        self.n_docs = 0

    @classmethod
    def from_stats(cls, n_docs, df):
        """An index that carries only document frequencies, enough for :func:`top_terms`."""
        index = cls()
        index.n_docs = int(n_docs)
        index.df = dict(df)
        return index

    def fit(self, questions):
        postings = defaultdict(list)
        doc_counts = []
        for doc_id, text in enumerate(questions):
            counts = Counter(tokenize(text))
            doc_counts.append(counts)
            for tok in sorted(counts):
                postings[tok].append((doc_id, counts[tok]))
        self.n_docs = len(doc_counts)
        self.postings = dict(postings)
        self.df = {tok: len(plist) for tok, plist in self.postings.items()}
        self.norms = [
            math.sqrt(math.fsum((tf * self.idf(tok)) ** 2 for tok, tf in counts.items()))
            for counts in doc_counts
        ]
        return self

    def idf(self, token):
        return smoothed_idf(self.n_docs, self.df.get(token, 0))

    def query_vector(self, text):
        counts = Counter(tokenize(text))
        return {tok: tf * self.idf(tok) for tok, tf in counts.items() if tok in self.postings}

    def top_k_similar(self, query, k=20):
        """Return up to ``k`` ``(doc_id, cosine)`` pairs with nonzero score.

        Ordered by descending score, ties by ascending doc id.
        """
        qvec = self.query_vector(query)
        if not qvec:
            return []
        qnorm = math.sqrt(math.fsum(w * w for w in qvec.values()))
        products = defaultdict(list)
        for tok in sorted(qvec):
            idf = self.idf(tok)
            for doc_id, tf in self.postings[tok]:
                products[doc_id].append(qvec[tok] * (tf * idf))
        scored = []
        for doc_id, prods in products.items():
            denom = qnorm * self.norms[doc_id]
            score = math.fsum(prods) / denom if denom > 0 else 0.0
            if score > 0:
                scored.append((doc_id, score))
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:k]


def build_index(questions) -> InvertedIndex:
    return InvertedIndex().fit(questions)


def term_scores(questions, index: InvertedIndex, stopwords=STOPWORDS, vocab=None):
    """TF-IDF weight of each eligible token over the concatenated ``questions``."""
    counts = Counter()
    for q in questions:
        counts.update(tokenize(q))
    scores = {}
    for tok, tf in counts.items():
        if tok in stopwords or tok in (PAD, UNK):
            continue
        if vocab is not None and tok not in vocab:
            continue
        scores[tok] = tf * index.idf(tok)
    return scores


def top_terms(questions, index: InvertedIndex, m=10, stopwords=STOPWORDS, vocab=None):
    """The ``m`` highest-scoring tokens of a bag, best first (ties by token)."""
    scores = term_scores(questions, index, stopwords=stopwords, vocab=vocab)
    ranked = sorted(scores, key=lambda t: (-scores[t], t))
    return ranked[:m]
