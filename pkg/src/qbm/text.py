"""Tokenization, vocabulary, embedding loading and fixed-length encoding."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, ParseError

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
MAX_LEN = 20

# CJK ideographs, kana and hangul syllables become one token per character
_IDEOGRAPHIC = (
    "぀-ヿ㐀-䶿一-鿿豈-﫿가-힯"
    "\U00020000-\U0002fa1f"
)
_TOKEN_RE = re.compile(
    rf"[{_IDEOGRAPHIC}]|[^\W_{_IDEOGRAPHIC}]+|[^\w\s]|_"
)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split off punctuation and ideographs.

    >>> tokenize("What is REFUND?")
    ['what', 'is', 'refund', '?']
    >>> tokenize("don't ship-today")
    ['don', "'", 't', 'ship', '-', 'today']
    """
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token to id map with PAD=0 and UNK=1."""

    def __init__(self, tokens=(), min_count=1):
        self.min_count = min_count
        self.itos = [PAD, UNK]
        for tok in tokens:
            if tok not in (PAD, UNK):
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, corpus, min_count=1):
        counts = Counter()
        for text in corpus:
            counts.update(tokenize(text))
        kept = [t for t, c in counts.items() if c >= min_count]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept, min_count=min_count)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __getitem__(self, token):
        return self.stoi.get(token, UNK_ID)

    def lookup(self, tokens):
        return [self.stoi.get(t, UNK_ID) for t in tokens]


def build_vocab(corpus, min_count=1) -> Vocabulary:
    return Vocabulary.build(corpus, min_count=min_count)


@dataclass(frozen=True)
class EncodedText:
    ids: np.ndarray
    mask: np.ndarray
    true_length: int

    @property
    def empty(self):
        return self.true_length == 0


def encode(text, vocab: Vocabulary, max_len: int = MAX_LEN) -> EncodedText:
    """Truncate to ``max_len`` tokens and pad with PAD."""
    tokens = tokenize(text) if isinstance(text, str) else list(text)
    ids = vocab.lookup(tokens[:max_len])
    n = len(ids)
    out = np.full(max_len, PAD_ID, dtype=np.int64)
    out[:n] = ids
    mask = np.zeros(max_len, dtype=np.int8)
    mask[:n] = 1
    return EncodedText(out, mask, n)


def load_embeddings(path, vocab: Vocabulary, dim: int = 300, seed: int = 0, dtype=np.float32):
    """Build a ``len(vocab) x dim`` table initialised from a word-vector file.

    Tokens missing from the file get uniform values in [-0.25, 0.25] drawn
    from ``seed``; the PAD row is all zeros.  An optional ``count dim``
    header line is skipped.
    """
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.25, 0.25, size=(len(vocab), dim))
    found = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                if int(parts[1]) != dim:
                    raise ConfigurationError(
                        f"{path}: embedding dim {parts[1]} does not match configured {dim}")
                continue
            token, values = parts[0], parts[1:]
            if found == 0 and len(values) != dim and _all_numeric(values):
                # the first vector fixes the file's dimension
                raise ConfigurationError(
                    f"{path}: embedding dim {len(values)} does not match configured {dim}")
            if len(values) != dim:
                raise ParseError(f"{path}: expected {dim} numbers, got {len(values)}", line=lineno)
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
            found += 1
            idx = vocab.stoi.get(token)
            if idx is not None:
                table[idx] = vec
    table[PAD_ID] = 0.0
    return table.astype(dtype)


def _all_numeric(values):
    try:
        [float(v) for v in values]
    except ValueError:
        return False
    return True


def random_embeddings(vocab: Vocabulary, dim: int = 300, seed: int = 0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.25, 0.25, size=(len(vocab), dim))
    table[PAD_ID] = 0.0
    return table.astype(dtype)
