"""Multi-index enumeration and combinatorics.

Multi-indices are plain integer tuples.  Two orderings matter everywhere
downstream:

* the *graded* order of ``enumerate_upto``: increasing total degree, ties
  broken by grlex (the tuple whose first differing component is larger comes
  first), so for d=2 the sequence starts (0,0), (1,0), (0,1), (2,0), (1,1),
  (0,2), ...  Dense coefficient vectors are indexed by position in this list.
* the sweep order of ``algorithm1_order`` used by the quasi-Trefftz
  coefficient recursion: increasing total degree q, then first component
  i1 = 0..q, then the remaining components in ascending lexicographic order.
"""

from __future__ import annotations

from functools import lru_cache
from math import comb, factorial

import numpy as np

MultiIndex = tuple  # tuple[int, ...]


def _compositions(total, length):
    """Yield tuples of `length` nonnegative ints summing to `total`, grlex order."""
    if length == 0:
        if total == 0:
            yield ()
        return
    if length == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, length - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def enumerate_upto(d, p):
    """All multi-indices i in N^d with |i| <= p, graded order (ties: grlex).

    d = 0 is allowed and gives [()], the single empty index.
    """
    if d < 0 or p < 0:
        raise ValueError(f"need d >= 0 and p >= 0, got d={d}, p={p}")
    out = []
    for q in range(p + 1):
        out.extend(_compositions(q, d))
    return out


@lru_cache(maxsize=None)
def position_map(d, p):
    """Dict multi-index -> position in enumerate_upto(d, p)."""
    return {mi: k for k, mi in enumerate(enumerate_upto(d, p))}


@lru_cache(maxsize=None)
def exponent_array(d, p):
    """enumerate_upto(d, p) stacked as an int array of shape (dim_full, d)."""
    return np.array(enumerate_upto(d, p), dtype=np.int64).reshape(-1, d)


def algorithm1_order(d, p, m):
    """Sweep order for the quasi-Trefftz recursion: all |i| <= p - m.

    Outer loop over the total degree q = 0..p-m, middle loop over i1 = 0..q,
    inner components in ascending lexicographic order.  Requires p >= m.
    """
    if p < m:
        raise ValueError(f"degree p={p} must be >= operator order m={m}")
    out = []
    for q in range(p - m + 1):
        for i1 in range(q + 1):
            rest = sorted(_compositions(q - i1, d - 1))
            out.extend((i1,) + r for r in rest)
    return out


def mi_factorial(i):
    """i! = prod_k i_k! (exact integer)."""
    out = 1
    for ik in i:
        out *= factorial(ik)
    return out


def mi_binomial(i, j):
    """binom(i, j) = prod_k binom(i_k, j_k); 0 unless j <= i componentwise."""
    out = 1
    for ik, jk in zip(i, j):
        if jk < 0 or jk > ik:
            return 0
        out *= comb(ik, jk)
    return out


def dim_full(d, p):
    """dim P^p(R^d) = binom(p + d, d)."""
    return comb(p + d, d)


def dim_qt(d, p, m):
    """dim of the order-m quasi-Trefftz subspace of P^p(R^d).

    binom(p+d, d) - binom(p+d-m, d); for p < m this equals dim_full.
    """
    low = p + d - m
    return comb(p + d, d) - (comb(low, d) if low >= d else 0)


@lru_cache(maxsize=None)
def monomial_links(d, p):
    """Index tables tying each graded monomial to lower-degree neighbours.

    Returns (parent, axis, down, kval) where for position t > 0 of exponent k:
    ``k = exps[parent[t]] + e_{axis[t]}``, and ``down[t, a]`` is the position
    of ``k - e_a`` (or -1 if k_a = 0) with ``kval[t, a] = k_a``.  These drive
    the monomial value/gradient table kernels.
    """
    exps = enumerate_upto(d, p)
    pos = position_map(d, p)
    n = len(exps)
    parent = np.zeros(n, dtype=np.int64)
    axis = np.zeros(n, dtype=np.int64)
    down = np.full((n, max(d, 1)), -1, dtype=np.int64)
    kval = np.zeros((n, max(d, 1)), dtype=np.float64)
    for t, k in enumerate(exps):
        for a in range(d):
            if k[a] > 0:
                lower = k[:a] + (k[a] - 1,) + k[a + 1 :]
                down[t, a] = pos[lower]
                kval[t, a] = k[a]
        if t > 0:
            a = next(ax for ax in range(d) if k[ax] > 0)
            parent[t] = down[t, a]
            axis[t] = a
    return parent, axis, down, kval
