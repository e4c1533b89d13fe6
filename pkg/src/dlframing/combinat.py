from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom


def compositions(n: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``n``."""
    if parts == 1:
        return np.array([[n]], dtype=np.int64)
    rows = []
    for head in range(n, -1, -1):
        tail = compositions(n - head, parts - 1)
        rows.append(np.column_stack([np.full(len(tail), head, dtype=np.int64), tail]))
    return np.vstack(rows)


def n_compositions(n: int, parts: int) -> int:
    return math.comb(n + parts - 1, parts - 1)


def multinomial_pmf(counts: np.ndarray, probs) -> np.ndarray:
    counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
    probs = np.asarray(probs, dtype=float)
    n = counts.sum(axis=1)
    logp = np.log(np.where(probs > 0, probs, 1.0))
    impossible = np.any((counts > 0) & (probs == 0), axis=1)
    out = np.exp(gammaln(n + 1) - gammaln(counts + 1).sum(axis=1) + (counts * logp).sum(axis=1))
    return np.where(impossible, 0.0, out)


@lru_cache(maxsize=4096)
def binomial_pmf(n: int, p: float) -> np.ndarray:
    """P(X = 0..n) for X ~ Binomial(n, p); the returned array is read-only."""
    out = binom.pmf(np.arange(n + 1), n, p)
    out.flags.writeable = False
    return out


def ceil_log2_int(c: int) -> int:
    """ceil(log2(c)) for a positive integer, computed exactly."""
    if c < 1:
        raise ValueError("argument must be a positive integer")
    return (c - 1).bit_length()
