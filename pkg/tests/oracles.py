"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


def all_sequences(max_len: int, alphabet_size: int) -> list[tuple[int, ...]]:
    return [s for k in range(max_len + 1) for s in itertools.product(range(alphabet_size), repeat=k)]


@lru_cache(maxsize=None)
def edit_distance_recursive(a: tuple, b: tuple) -> int:
    """The textbook recursion on first symbols, memoised."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(edit_distance_recursive(a[1:], b) + 1,
               edit_distance_recursive(a, b[1:]) + 1,
               edit_distance_recursive(a[1:], b[1:]) + (a[0] != b[0]))


def edit_distance_table(seqs: list[tuple[int, ...]]) -> np.ndarray:
    """The same recursion evaluated for every pair of ``seqs`` at once.

    ``seqs`` must be closed under dropping the first symbol (as
    :func:`all_sequences` is). Rows/columns are filled in order of length so
    every right-hand side is ready when needed.
    """
    index = {s: i for i, s in enumerate(seqs)}
    n = len(seqs)
    lens = np.array([len(s) for s in seqs])
    tail = np.array([index[s[1:]] if s else -1 for s in seqs])
    head = np.array([s[0] if s else -1 for s in seqs])
    d = np.full((n, n), -1, dtype=np.int16)
    for la in range(lens.max() + 1):
        rows = np.nonzero(lens == la)[0]
        for lb in range(lens.max() + 1):
            cols = np.nonzero(lens == lb)[0]
            r, c = np.ix_(rows, cols)
            if la == 0 or lb == 0:
                d[r, c] = la + lb
                continue
            ti, tj = tail[rows][:, None], tail[cols][None, :]
            sub = d[ti, tj] + (head[rows][:, None] != head[cols][None, :])
            d[r, c] = np.minimum(np.minimum(d[ti, c] + 1, d[r, tj] + 1), sub)
    return d


def exhaustive_best_sequence(logprob_fn, vocab: list[int], eos: int, max_len: int) -> tuple[tuple[int, ...], float]:
    """Highest-scoring EOS-terminated sequence of at most ``max_len`` tokens by full enumeration."""
    best, best_score = None, -np.inf
    for k in range(max_len + 1):
        for toks in itertools.product(vocab, repeat=k):
            score = logprob_fn(toks)
            if score > best_score:
                best, best_score = toks, score
    return best, best_score
