"""Query-bag dataset construction from duplicate-question pairs.

Pipeline: pairs -> union-find bags -> size filter and query extraction ->
TF-IDF hard negatives -> train/valid/test instance files.
"""
from __future__ import annotations

import csv
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DatasetTooSmallError, ParseError, SizingError
from .lexical import build_index

logger = logging.getLogger(__name__)

SEPARATOR = "||"
MAX_BAG = 5
RETRIEVAL_DEPTH = 20


@dataclass(frozen=True)
class PairRecord:
    q1: str
    q2: str
    is_duplicate: bool


@dataclass(frozen=True)
class Bag:
    bag_id: str
    questions: tuple

    def __len__(self):
        return len(self.questions)


@dataclass
class QueryBagInstance:
    query_id: str
    query: str
    candidates: list
    label_index: int
    split: str = ""
    labels: list = field(default=None, repr=False)

    @property
    def positive(self):
        return self.candidates[self.label_index]


# --------------------------------------------------------------------------
# pair file


def _clean(text):
    return re.sub(r"\s+", " ", text).strip()


def read_pairs(path):
    """Read ``q1<TAB>q2<TAB>is_duplicate`` lines (a header line is skipped).

    The six-column layout of the public duplicate-question release
    (``id qid1 qid2 question1 question2 is_duplicate``) is accepted too.
    Pairs with an empty side or containing the bag separator are dropped.
    """
    pairs, dropped = [], 0
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        for lineno, row in enumerate(reader, start=1):
            if not row or row == [""]:
                continue
            if len(row) == 6:
                row = row[3:]
            if len(row) != 3:
                raise ParseError(f"{path}: expected 3 tab-separated fields, got {len(row)}", line=lineno)
            label = row[2].strip()
            if label not in ("0", "1"):
                if lineno == 1:
                    continue
                raise ParseError(f"{path}: is_duplicate must be 0 or 1, got {label!r}", line=lineno)
            q1, q2 = _clean(row[0]), _clean(row[1])
            if not q1 or not q2 or SEPARATOR in q1 or SEPARATOR in q2:
                dropped += 1
                continue
            pairs.append(PairRecord(q1, q2, label == "1"))
    if dropped:
        logger.warning("dropped %d pairs with an empty question or a '%s' separator", dropped, SEPARATOR)
    return pairs


def write_pairs(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("q1\tq2\tis_duplicate\n")
        for p in pairs:
            fh.write(f"{p.q1}\t{p.q2}\t{int(p.is_duplicate)}\n")


# --------------------------------------------------------------------------
# union-find grouping


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self):
        self.parent = {}
        self.size = {}

    def add(self, x):
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1

    def find(self, x):
        self.add(x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra

    def components(self):
        groups = {}
        for x in self.parent:
            groups.setdefault(self.find(x), []).append(x)
        return list(groups.values())


def group_duplicates(pairs):
    """Connected components of the duplicate graph, as bags.

    Every question seen in any pair is a node; only ``is_duplicate`` pairs
    are edges.  Bags list their questions sorted and are numbered in order
    of their smallest question, so the result does not depend on pair order.
    """
    uf = UnionFind()
    for p in pairs:
        uf.add(p.q1)
        uf.add(p.q2)
        if p.is_duplicate:
            uf.union(p.q1, p.q2)
    comps = sorted(sorted(c) for c in uf.components())
    return [Bag(f"b{i:06d}", tuple(c)) for i, c in enumerate(comps)]


def filter_and_split(bags, min_size=3, max_bag=MAX_BAG):
    """Drop small bags; pull out the smallest question as the query.

    Returns ``(query, Bag)`` pairs; the remaining questions are capped at
    ``max_bag`` by keeping the lexicographically smallest.
    """
    out = []
    for bag in bags:
        qs = sorted(set(bag.questions))
        if len(qs) < min_size:
            continue
        out.append((qs[0], Bag(bag.bag_id, tuple(qs[1:1 + max_bag]))))
    return out


# --------------------------------------------------------------------------
# negatives


class NegativeSampler:
    """Hard-negative bag sampling through lexical retrieval over bag questions."""

    def __init__(self, bags, depth=RETRIEVAL_DEPTH):
        self.bags = list(bags)
        self.depth = depth
        self.doc_bag = []
        docs = []
        for b, bag in enumerate(self.bags):
            for q in bag.questions:
                docs.append(q)
                self.doc_bag.append(b)
        self.docs = docs
        self.index = build_index(docs)
        self.position = {bag.bag_id: i for i, bag in enumerate(self.bags)}

    def sample(self, query, positive: Bag, k, rng):
        if len(self.bags) < k + 1:
            raise DatasetTooSmallError(
                f"need at least {k + 1} bags to draw {k} negatives, corpus has {len(self.bags)}")
        banned = set(positive.questions)
        pos = self.position.get(positive.bag_id)

        def eligible(b):
            return b != pos and not banned.intersection(self.bags[b].questions)

        candidates = []
        for doc_id, _ in self.index.top_k_similar(query, self.depth):
            if self.docs[doc_id] in banned:
                continue
            b = self.doc_bag[doc_id]
            if b not in candidates and eligible(b):
                candidates.append(b)
        if len(candidates) >= k:
            chosen = [candidates[i] for i in rng.choice(len(candidates), size=k, replace=False)]
        else:
            chosen = list(candidates)
            rest = [b for b in range(len(self.bags)) if b not in chosen and eligible(b)]
            if len(rest) < k - len(chosen):
                raise DatasetTooSmallError(f"only {len(rest) + len(chosen)} eligible negative bags, need {k}")
            extra = rng.choice(len(rest), size=k - len(chosen), replace=False)
            chosen.extend(rest[i] for i in extra)
        return [self.bags[b] for b in chosen]


def sample_negatives(query, positive, all_bags, index=None, k=1, seed=0, depth=RETRIEVAL_DEPTH):
    """Functional form of :meth:`NegativeSampler.sample`; ``index`` may be a prebuilt sampler."""
    sampler = index if isinstance(index, NegativeSampler) else NegativeSampler(all_bags, depth)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return sampler.sample(query, positive, k, rng)


# --------------------------------------------------------------------------
# splits


def resolve_sizes(n, sizes=None, ratios=(0.8, 0.1, 0.1)):
    if sizes is None:
        test = int(round(n * ratios[2]))
        valid = int(round(n * ratios[1]))
        sizes = (n - valid - test, valid, test)
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or min(sizes) < 0:
        raise SizingError(f"split sizes must be three non-negative integers, got {sizes}")
    if sum(sizes) > n:
        raise SizingError(f"requested {sum(sizes)} queries ({sizes}) but only {n} are available")
    return sizes


def build_instances(query_bags, sizes=None, seed=0, train_negatives=1, test_negatives=9,
                    depth=RETRIEVAL_DEPTH, ratios=(0.8, 0.1, 0.1)):
    """Split ``(query, Bag)`` pairs by query and attach sampled negatives.

    Returns ``{"train": [...], "valid": [...], "test": [...]}`` lists of
    :class:`QueryBagInstance`.  Candidate order inside an instance is
    shuffled so the positive's position carries no signal.
    """
    query_bags = sorted(query_bags, key=lambda qb: qb[1].bag_id)
    seen = Counter(q for q, _ in query_bags)
    if any(c > 1 for c in seen.values()):
        raise SizingError("a query string occurs in more than one bag")
    sizes = resolve_sizes(len(query_bags), sizes, ratios)
    sampler = NegativeSampler([b for _, b in query_bags], depth)
    order = np.random.default_rng(seed).permutation(len(query_bags))
    splits, start = {}, 0
    for name, size in zip(("train", "valid", "test"), sizes):
        k = test_negatives if name == "test" else train_negatives
        picked = sorted(order[start:start + size])
        start += size
        instances = []
        for idx in picked:
            query, positive = query_bags[idx]
            rng = np.random.default_rng([seed, int(idx)])
            negatives = sampler.sample(query, positive, k, rng)
            cands = [positive] + negatives
            perm = rng.permutation(len(cands))
            cands = [cands[i] for i in perm]
            label_index = int(np.flatnonzero(perm == 0)[0])
            instances.append(QueryBagInstance(f"q{idx:06d}", query, cands, label_index, name))
        splits[name] = instances
    return splits


# --------------------------------------------------------------------------
# instance files


def _check_field(text):
    if "\t" in text or "\n" in text or "\r" in text:
        raise ParseError(f"field contains a tab or newline: {text!r}")
    return text


def format_instance(inst: QueryBagInstance):
    lines = []
    for i, bag in enumerate(inst.candidates):
        for q in bag.questions:
            _check_field(q)
            if SEPARATOR in q:
                raise ParseError(f"question contains the bag separator: {q!r}")
        label = int(i == inst.label_index)
        lines.append("\t".join([_check_field(inst.query_id), _check_field(inst.query),
                                _check_field(bag.bag_id), str(label),
                                SEPARATOR.join(bag.questions)]))
    return "\n".join(lines) + "\n"


def write_instances(path, instances):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(format_instance(inst))


def parse_instance_line(line, lineno=None):
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise ParseError(f"expected 5 tab-separated fields, got {len(parts)}", line=lineno)
    qid, query, bag_id, label, joined = parts
    if label not in ("0", "1"):
        raise ParseError(f"label must be 0 or 1, got {label!r}", line=lineno)
    questions = tuple(q for q in joined.split(SEPARATOR) if q)
    if not questions:
        raise ParseError("candidate bag has no questions", line=lineno)
    return qid, query, Bag(bag_id, questions), int(label)


def read_instances(path, split=""):
    """Group candidate lines by ``query_id`` (file order preserved)."""
    groups = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            qid, query, bag, label = parse_instance_line(line, lineno)
            inst = groups.get(qid)
            if inst is None:
                inst = groups[qid] = QueryBagInstance(qid, query, [], -1, split, labels=[])
            inst.candidates.append(bag)
            inst.labels.append(label)
    out = []
    for inst in groups.values():
        positives = [i for i, lab in enumerate(inst.labels) if lab == 1]
        if len(positives) != 1:
            raise ParseError(f"{path}: query {inst.query_id} has {len(positives)} positive candidates")
        inst.label_index = positives[0]
        out.append(inst)
    return out


def instances_to_xy(instances):
    """Flatten instances to ``(query, bag questions)`` samples and 0/1 labels."""
    X, y = [], []
    for inst in instances:
        for i, bag in enumerate(inst.candidates):
            X.append((inst.query, bag.questions))
            y.append(int(i == inst.label_index))
    return X, np.asarray(y, dtype=np.int64)


def dataset_stats(bags, splits):
    hist = Counter(len(b) for b in bags)
    hist_text = ",".join(f"{size}:{hist[size]}" for size in sorted(hist))
    counts = " ".join(f"{name}={len(splits[name])}" for name in ("train", "valid", "test"))
    records = " ".join(f"{name}_records={sum(len(i.candidates) for i in splits[name])}"
                       for name in ("train", "valid", "test"))
    return f"bags={len(bags)} size_hist={hist_text} {counts} {records}"
