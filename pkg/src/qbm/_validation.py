"""Input checks for query-bag samples, in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numpy as np

from .exceptions import DegenerateInputError, LabelError


def check_query_bag_X(X):
    """Coerce ``X`` to a list of ``(query, tuple_of_questions)`` samples.

    Accepts any sequence of 2-item pairs whose first item is a string and
    whose second is a string or a sequence of strings.
    """
    if isinstance(X, (str, bytes)):
        raise TypeError("X must be a sequence of (query, bag) pairs, not a string")
    out = []
    for i, sample in enumerate(X):
        try:
            query, bag = sample
        except (TypeError, ValueError):
            raise TypeError(f"sample {i} is not a (query, bag) pair: {sample!r}") from None
        if not isinstance(query, str):
            raise TypeError(f"sample {i}: query must be str, got {type(query).__name__}")
        if isinstance(bag, str):
            bag = (bag,)
        bag = tuple(bag)
        if not bag:
            raise DegenerateInputError(f"sample {i}: empty bag")
        for q in bag:
            if not isinstance(q, str):
                raise TypeError(f"sample {i}: bag questions must be str, got {type(q).__name__}")
        out.append((query, bag))
    return out


def check_binary_labels(y, n_samples):
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_samples:
        raise ValueError(f"y has shape {y.shape}, expected ({n_samples},)")
    if y.size and not np.isin(y, (0, 1)).all():
        raise LabelError(f"labels must be 0 or 1, got {sorted(set(y.tolist()))}")
    return y.astype(np.int64)
