"""Brute-force reference for sequence judgements, written independently of judge()."""

from __future__ import annotations

from itertools import combinations, product
from typing import Iterator, Sequence


def subsequences(g: Sequence) -> set[tuple]:
    """Every subsequence of ``g`` by explicit index selection, the empty one included."""
    return {tuple(g[i] for i in idx) for r in range(len(g) + 1) for idx in combinations(range(len(g)), r)}


def reference(g: Sequence, t: Sequence, finished: bool = False) -> tuple:
    """(exact, completed, covered, prefix_fraction, precision, premature) by enumeration."""
    g, t = tuple(g), tuple(t)
    subs = subsequences(g)
    covered = t in subs
    lcp = max(k for k in range(min(len(g), len(t)) + 1) if g[:k] == t[:k])
    matched = max(k for k in range(len(t) + 1) if t[:k] in subs)
    return (
        g == t,
        covered and len(g) > 0 and g[-1] == t[-1],
        covered,
        lcp / len(t),
        matched / len(g) if lcp > 0 else 0.0,
        finished and not covered,
    )


def restricted_growth(max_len: int, alphabet: int) -> Iterator[tuple[int, ...]]:
    """One representative per relabeling class: first occurrences appear as 0, 1, 2, ..."""
    def grow(prefix: tuple[int, ...], used: int) -> Iterator[tuple[int, ...]]:
        yield prefix
        if len(prefix) == max_len:
            return
        for s in range(min(used + 1, alphabet)):
            yield from grow(prefix + (s,), max(used, s + 1))

    yield from grow((), 0)


def all_sequences(max_len: int, alphabet: int, min_len: int = 0) -> Iterator[tuple[int, ...]]:
    for n in range(min_len, max_len + 1):
        yield from product(range(alphabet), repeat=n)
