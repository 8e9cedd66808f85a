import math
from collections import Counter

import numpy as np
import pytest
from sklearn.feature_extraction.text import TfidfVectorizer

from qbm.lexical import STOPWORDS, build_index, smoothed_idf, top_terms
from qbm.text import Vocabulary, tokenize


def random_corpus(rng, n_docs, vocab_size=12, max_len=6):
    words = [f"w{i}" for i in range(vocab_size)]
    docs = [" ".join(rng.choice(words, size=rng.integers(1, max_len + 1))) for _ in range(n_docs)]
    # plant exact duplicates so ties are common
    for i in range(0, n_docs - 1, 7):
        docs[i + 1] = docs[i]
    return docs


def dense_oracle(docs):
    tokens = sorted({t for d in docs for t in tokenize(d)})
    counts = [Counter(tokenize(d)) for d in docs]
    df = {t: sum(t in c for c in counts) for t in tokens}
    idf = {t: smoothed_idf(len(docs), df[t]) for t in tokens}
    vecs = [{t: c[t] * idf[t] for t in c} for c in counts]
    norms = [math.sqrt(math.fsum(w * w for w in v.values())) for v in vecs]
    return idf, vecs, norms


def oracle_top_k(docs, query, k):
    idf, vecs, norms = dense_oracle(docs)
    qc = Counter(t for t in tokenize(query) if t in idf)
    qv = {t: qc[t] * idf[t] for t in qc}
    qn = math.sqrt(math.fsum(w * w for w in qv.values()))
    scored = []
    for i, v in enumerate(vecs):
        dot = math.fsum(qv[t] * v[t] for t in qv if t in v)
        if qn and norms[i] and dot > 0:
            scored.append((i, dot / (qn * norms[i])))
    scored.sort(key=lambda s: (-s[1], s[0]))
    return scored[:k]


def test_single_doc_postings():
    index = build_index(["a b"])
    assert index.postings == {"a": [(0, 1)], "b": [(0, 1)]}


def test_duplicate_docs_get_separate_ids():
    index = build_index(["x y", "x y"])
    assert index.postings["x"] == [(0, 1), (1, 1)]
    assert index.norms[0] == index.norms[1]


def test_norms_match_dense_oracle():
    docs = random_corpus(np.random.default_rng(0), 50)
    index = build_index(docs)
    _, _, norms = dense_oracle(docs)
    np.testing.assert_allclose(index.norms, norms, atol=1e-9)
    for plist in index.postings.values():
        assert [d for d, _ in plist] == sorted(d for d, _ in plist)


def test_disjoint_vocabulary_and_self_similarity():
    index = build_index(["a b", "c d"])
    assert [d for d, _ in index.top_k_similar("b")] == [0]
    top = index.top_k_similar("c d")
    assert top[0][0] == 1 and top[0][1] == pytest.approx(1.0, abs=1e-9)
    assert index.top_k_similar("zzz") == []


@pytest.mark.parametrize("seed", range(5))
def test_top_k_matches_exhaustive_cosine_including_ties(seed):
    rng = np.random.default_rng(seed)
    docs = random_corpus(rng, 100)
    index = build_index(docs)
    for _ in range(20):
        query = docs[rng.integers(len(docs))] if rng.random() < 0.5 else " ".join(
            rng.choice([f"w{i}" for i in range(14)], size=3))
        got = index.top_k_similar(query, k=20)
        assert got == oracle_top_k(docs, query, 20)
        scores = [s for _, s in got]
        assert all(0 <= s <= 1 + 1e-9 for s in scores)
        assert scores == sorted(scores, reverse=True)


def test_scores_agree_with_sklearn_tfidf():
    docs = random_corpus(np.random.default_rng(9), 40)
    vec = TfidfVectorizer(tokenizer=tokenize, lowercase=False, token_pattern=None)
    X = vec.fit_transform(docs).toarray()
    index = build_index(docs)
    q = docs[3]
    sims = X @ X[3]
    for doc_id, score in index.top_k_similar(q, k=40):
        assert score == pytest.approx(sims[doc_id], abs=1e-9)


def test_irrelevant_document_keeps_oracle_equivalence():
    docs = random_corpus(np.random.default_rng(1), 30)
    extended = docs + ["entirely unrelated tokens"]
    assert build_index(extended).top_k_similar(docs[0]) == oracle_top_k(extended, docs[0], 20)


def test_top_terms_rules():
    index = build_index(["refund money", "shipping cost", "late parcel"])
    bag = ["refund refund refund the the the the", "money back"]
    terms = top_terms(bag, index, m=10)
    assert terms[0] == "refund"
    assert "the" not in terms
    assert top_terms(["the is a", "of to"], index) == []


def test_top_terms_excludes_out_of_vocabulary():
    index = build_index(["alpha beta", "gamma"])
    vocab = Vocabulary(["alpha"])
    assert top_terms(["alpha beta"], index, vocab=vocab) == ["alpha"]


@pytest.mark.parametrize("seed", range(10))
def test_top_terms_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    corpus = random_corpus(rng, 30, vocab_size=20) + ["the a of is"]
    bag = [corpus[i] + " the" for i in rng.choice(30, size=3, replace=False)]
    index = build_index(corpus)
    m = int(rng.integers(1, 8))
    tf = Counter(t for q in bag for t in tokenize(q))
    best = []
    for tok in tf:
        if tok in STOPWORDS:
            continue
        best.append((-tf[tok] * index.idf(tok), tok))
    expected = [tok for _, tok in sorted(best)[:m]]
    got = top_terms(bag, index, m=m)
    assert got == expected
    assert len(got) <= m and not set(got) & STOPWORDS
