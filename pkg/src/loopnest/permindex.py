"""Indexing schemes over the 720 loop orderings.

Three ways to number the orderings:

* ``lex`` - rank in lexicographic order of the dimension codes.
* ``revlex`` - lexicographic order read on the reversed sequence, so the
  innermost position varies slowest: ranks [k*120, (k+1)*120) all share the
  same innermost loop.
* ``hamiltonian`` - position along a Steinhaus-Johnson-Trotter path, where
  consecutive orderings differ by one adjacent transposition (a Hamiltonian
  path on the permutohedron).
"""
from __future__ import annotations

from functools import lru_cache
from math import factorial
from typing import Iterable, Sequence

SCHEMES = ("lex", "revlex", "hamiltonian")


def sjt_path(n: int) -> list[tuple[int, ...]]:
    """All permutations of 0..n-1 by plain changes, starting at identity.

    Johnson-Trotter with directed elements: each step swaps the largest
    mobile element with its neighbour, so consecutive permutations differ
    by exactly one adjacent transposition.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    perm = list(range(n))
    direction = [-1] * n  # all elements initially look left
    out = [tuple(perm)]
    while True:
        # largest mobile element: its neighbour in the facing direction is smaller
        mobile = -1
        mobile_pos = -1
        for pos, val in enumerate(perm):
            npos = pos + direction[val]
            if 0 <= npos < n and perm[npos] < val and val > mobile:
                mobile = val
                mobile_pos = pos
        if mobile < 0:
            break
        dst = mobile_pos + direction[mobile]
        perm[mobile_pos], perm[dst] = perm[dst], perm[mobile_pos]
        for val in range(mobile + 1, n):
            direction[val] = -direction[val]
        out.append(tuple(perm))
    return out


@lru_cache(maxsize=None)
def _sjt_cached(n: int) -> tuple[tuple[int, ...], ...]:
    return tuple(sjt_path(n))


@lru_cache(maxsize=None)
def _sjt_rank(n: int) -> dict[tuple[int, ...], int]:
    return {p: r for r, p in enumerate(_sjt_cached(n))}


def _as_codes(perm: Sequence[int]) -> tuple[int, ...]:
    codes = tuple(int(d) for d in perm)
    n = len(codes)
    if sorted(codes) != list(range(n)):
        raise ValueError(f"not a permutation of 0..{n - 1}: {perm!r}")
    return codes


def _lex_rank(codes: Sequence[int]) -> int:
    # factorial number system: count smaller unused codes at each position
    n = len(codes)
    rank = 0
    for pos, val in enumerate(codes):
        smaller = sum(1 for later in codes[pos + 1 :] if later < val)
        rank += smaller * factorial(n - 1 - pos)
    return rank


def _lex_unrank(rank: int, n: int) -> tuple[int, ...]:
    avail = list(range(n))
    codes = []
    for pos in range(n):
        f = factorial(n - 1 - pos)
        codes.append(avail.pop(rank // f))
        rank %= f
    return tuple(codes)


def index_of(perm: Sequence[int], scheme: str = "lex") -> int:
    """Rank of a permutation under one of the three schemes."""
    codes = _as_codes(perm)
    n = len(codes)
    if scheme == "lex":
        return _lex_rank(codes)
    if scheme == "revlex":
        return _lex_rank(codes[::-1])
    if scheme == "hamiltonian":
        return _sjt_rank(n)[codes]
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def perm_of(rank: int, scheme: str = "lex", n: int = 6) -> tuple[int, ...]:
    """Inverse of index_of."""
    if not 0 <= rank < factorial(n):
        raise ValueError(f"rank {rank} out of range for n={n}")
    if scheme == "lex":
        return _lex_unrank(rank, n)
    if scheme == "revlex":
        return _lex_unrank(rank, n)[::-1]
    if scheme == "hamiltonian":
        return _sjt_cached(n)[rank]
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def all_perms(n: int = 6) -> Iterable[tuple[int, ...]]:
    """All permutations of 0..n-1 in lexicographic order."""
    return (_lex_unrank(r, n) for r in range(factorial(n)))


def adjacent_transposition_edges(n: int) -> set[frozenset[tuple[int, ...]]]:
    """Undirected neighbour pairs: permutations differing by one adjacent swap."""
    edges = set()
    for p in all_perms(n):
        lp = list(p)
        for pos in range(n - 1):
            lp[pos], lp[pos + 1] = lp[pos + 1], lp[pos]
            edges.add(frozenset((p, tuple(lp))))
            lp[pos], lp[pos + 1] = lp[pos + 1], lp[pos]
    return edges
