"""Exact group arithmetic for Z^d, finite groups and H x| Z, plus finite-set
boundary and invariance computations.

Elements are plain hashable tuples so that finite subsets are ordinary
``frozenset`` objects:

* ``zd``         -- a length-``d`` tuple of ints
* ``semidirect`` -- ``(h, i)`` with ``h`` a length-``d`` tuple, meaning ``h g^i``
* ``finite``     -- an int index into the multiplication table
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

Matrix = tuple[tuple[int, ...], ...]
FiniteSubset = frozenset


class GroupError(ValueError):
    pass


def _as_matrix(rows: Sequence[Sequence[int]]) -> Matrix:
    return tuple(tuple(int(v) for v in row) for row in rows)


def identity_matrix(d: int) -> Matrix:
    return tuple(tuple(int(i == j) for j in range(d)) for i in range(d))


def mat_mul(a: Matrix, b: Matrix) -> Matrix:
    n = len(b)
    cols = list(zip(*b)) if n else []
    return tuple(tuple(sum(x * y for x, y in zip(row, col)) for col in cols) for row in a)


def mat_vec(a: Matrix, v: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(sum(x * y for x, y in zip(row, v)) for row in a)


def integer_inverse(a: Matrix) -> Matrix:
    """Inverse of an integer matrix, which must itself be integral (det = +-1)."""
    d = len(a)
    m = [[Fraction(v) for v in row] + [Fraction(int(i == j)) for j in range(d)]
         for i, row in enumerate(a)]
    for col in range(d):
        piv = next((r for r in range(col, d) if m[r][col] != 0), None)
        if piv is None:
            raise GroupError("alpha is singular")
        m[col], m[piv] = m[piv], m[col]
        pv = m[col][col]
        m[col] = [v / pv for v in m[col]]
        for r in range(d):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    inv = [row[d:] for row in m]
    if any(v.denominator != 1 for row in inv for v in row):
        raise GroupError("alpha is not invertible over the integers")
    return tuple(tuple(int(v) for v in row) for row in inv)


@functools.lru_cache(maxsize=None)
def _alpha_power(alpha: Matrix, alpha_inv: Matrix, i: int) -> Matrix:
    if i == 0:
        return identity_matrix(len(alpha))
    if i < 0:
        return _alpha_power(alpha_inv, alpha, -i)
    half = _alpha_power(alpha, alpha_inv, i // 2)
    sq = mat_mul(half, half)
    return mat_mul(sq, alpha) if i % 2 else sq


@dataclass(frozen=True)
class GroupContext:
    kind: str
    d: int = 0
    alpha: Optional[Matrix] = None
    table: Optional[tuple[tuple[int, ...], ...]] = None

    def __post_init__(self):
        if self.kind == "zd":
            if self.d < 1:
                raise GroupError("rank must be positive")
        elif self.kind == "semidirect":
            if self.alpha is None or len(self.alpha) != self.d:
                raise GroupError("semidirect context needs a d x d alpha")
            object.__setattr__(self, "alpha", _as_matrix(self.alpha))
            integer_inverse(self.alpha)
        elif self.kind == "finite":
            if not self.table:
                raise GroupError("finite context needs a multiplication table")
            n = len(self.table)
            object.__setattr__(self, "table", _as_matrix(self.table))
            if any(len(row) != n or sorted(row) != list(range(n)) for row in self.table):
                raise GroupError("table is not a Latin square")
        else:
            raise GroupError(f"unknown group kind {self.kind!r}")

    # constructors
    @classmethod
    def zd(cls, d: int) -> "GroupContext":
        return cls("zd", d)

    @classmethod
    def semidirect(cls, alpha: Sequence[Sequence[int]]) -> "GroupContext":
        a = _as_matrix(alpha)
        return cls("semidirect", len(a), a)

    @classmethod
    def finite(cls, table: Sequence[Sequence[int]]) -> "GroupContext":
        return cls("finite", 0, None, _as_matrix(table))

    @property
    def H(self) -> "GroupContext":
        """The normal subgroup Z^d of a semidirect context."""
        if self.kind != "semidirect":
            raise GroupError("only semidirect contexts have an H")
        return GroupContext.zd(self.d)

    @functools.cached_property
    def alpha_inv(self) -> Matrix:
        if self.alpha is None:
            raise GroupError("context has no automorphism")
        return integer_inverse(self.alpha)

    @functools.cached_property
    def _finite_identity(self) -> int:
        n = len(self.table)
        return next(e for e in range(n) if all(self.table[e][x] == x for x in range(n)))

    def alpha_power(self, i: int) -> Matrix:
        if self.alpha is None:
            raise GroupError("context has no automorphism")
        return _alpha_power(self.alpha, self.alpha_inv, i)

    def apply_alpha(self, i: int, h: tuple[int, ...]) -> tuple[int, ...]:
        if i == 0:
            return h
        return mat_vec(self.alpha_power(i), h)

    # element arithmetic
    def identity(self):
        if self.kind == "zd":
            return (0,) * self.d
        if self.kind == "semidirect":
            return ((0,) * self.d, 0)
        return self._finite_identity

    def compose(self, a, b):
        if self.kind == "zd":
            return tuple(x + y for x, y in zip(a, b))
        if self.kind == "semidirect":
            (h1, i1), (h2, i2) = a, b
            h2t = self.apply_alpha(i1, h2)
            return (tuple(x + y for x, y in zip(h1, h2t)), i1 + i2)
        return self.table[a][b]

    def inverse(self, a):
        if self.kind == "zd":
            return tuple(-x for x in a)
        if self.kind == "semidirect":
            h, i = a
            return (tuple(-x for x in self.apply_alpha(-i, h)), -i)
        e = self._finite_identity
        return self.table[a].index(e)

    def is_element(self, a) -> bool:
        if self.kind == "zd":
            return isinstance(a, tuple) and len(a) == self.d and all(isinstance(v, int) for v in a)
        if self.kind == "semidirect":
            return (isinstance(a, tuple) and len(a) == 2 and isinstance(a[1], int)
                    and GroupContext.zd(self.d).is_element(a[0]))
        return isinstance(a, int) and 0 <= a < len(self.table)

    def g_power(self, i: int):
        """The element g^i of a semidirect context."""
        if self.kind != "semidirect":
            raise GroupError("g only exists in semidirect contexts")
        return ((0,) * self.d, i)

    def embed_h(self, h: tuple[int, ...]):
        if self.kind != "semidirect":
            raise GroupError("only semidirect contexts embed H")
        return (tuple(h), 0)

    def sort_key(self, a):
        """Canonical lexicographic order, used for every deterministic tie-break."""
        if self.kind == "semidirect":
            return (a[1],) + tuple(a[0])
        return a


def compose(ctx: GroupContext, a, b):
    if not (ctx.is_element(a) and ctx.is_element(b)):
        raise GroupError("elements do not belong to this context")
    return ctx.compose(a, b)


def apply_alpha_power(ctx: GroupContext, i: int, F: Iterable) -> frozenset:
    """alpha^i applied elementwise to a finite subset of H."""
    if ctx.alpha is None:
        raise GroupError("context has no automorphism")
    if i == 0:
        return frozenset(F)
    m = ctx.alpha_power(i)
    return frozenset(mat_vec(m, h) for h in F)


def product_set(ctx: GroupContext, F1: Iterable, F2: Iterable) -> frozenset:
    F2 = list(F2)
    return frozenset(ctx.compose(a, b) for a in F1 for b in F2)


def inverse_set(ctx: GroupContext, F: Iterable) -> frozenset:
    return frozenset(ctx.inverse(a) for a in F)


def k_boundary(ctx: GroupContext, K: Iterable, F: Iterable) -> frozenset:
    """Left K-boundary: all t with Kt meeting both F and its complement.

    Only t in K^{-1}F can have Kt meeting F, so that is the search space.
    """
    K = list(K)
    if not K:
        raise GroupError("K must be nonempty")
    F = F if isinstance(F, (set, frozenset)) else frozenset(F)
    if not F:
        return frozenset()
    if ctx.kind == "zd":
        if len(K) * len(F) > 4096:
            return _zd_boundary(ctx.d, K, F)
        if ctx.d == 2:
            cands = {(f0 - k0, f1 - k1) for k0, k1 in K for f0, f1 in F}
            return frozenset(t for t in cands
                             if not all((k0 + t[0], k1 + t[1]) in F for k0, k1 in K))
    if ctx.kind == "semidirect" and len(K) * len(F) > 4096 and _acts_by_translation(ctx, K):
        # k t = (k_h + t_h, k_i + t_i) when alpha^{k_i} = id, i.e. a shift in Z^{d+1}
        flat = _zd_boundary(ctx.d + 1, [tuple(h) + (i,) for h, i in K],
                            frozenset(tuple(h) + (i,) for h, i in F))
        return frozenset((t[:-1], t[-1]) for t in flat)
    comp, inv = ctx.compose, ctx.inverse
    kinv = [inv(k) for k in K]
    cands = {comp(ki, f) for ki in kinv for f in F}
    return frozenset(t for t in cands if not all(comp(k, t) in F for k in K))


def _acts_by_translation(ctx: GroupContext, K: list) -> bool:
    ident = identity_matrix(ctx.d)
    return all(ctx.alpha_power(i) == ident for i in {k[1] for k in K})


def _zd_boundary(d: int, K: list, F: frozenset) -> frozenset:
    # count, for each t in K^{-1}F, how many kt land in F, on a dense grid
    Ka = np.array(K, dtype=np.int64).reshape(len(K), d)
    Fa = np.array(list(F), dtype=np.int64).reshape(len(F), d)
    flo, fhi = Fa.min(0), Fa.max(0)
    lo, hi = flo - Ka.max(0), fhi - Ka.min(0)
    shape = tuple(int(v) for v in hi - lo + 1)
    ind = np.zeros(tuple(int(v) for v in fhi - flo + 1), dtype=bool)
    ind[tuple((Fa - flo).T)] = True
    cnt = np.zeros(shape, dtype=np.int32)
    for k in Ka:
        off = flo - k - lo  # t = f - k sits at f - k - lo
        sl = tuple(slice(int(o), int(o) + s) for o, s in zip(off, ind.shape))
        cnt[sl] += ind
    hits = np.argwhere((cnt > 0) & (cnt < len(K))) + lo
    return frozenset(tuple(int(v) for v in row) for row in hits)


def check_invariance(ctx: GroupContext, K: Iterable, delta, F: Iterable) -> tuple[bool, Fraction]:
    """(|d_K F| <= delta |F|, |d_K F| / |F|) with exact rationals."""
    F = frozenset(F)
    if not F:
        raise GroupError("F must be nonempty")
    ratio = Fraction(len(k_boundary(ctx, K, F)), len(F))
    return ratio <= Fraction(delta), ratio


def box(ctx: GroupContext, lo: Sequence[int] | int, hi: Sequence[int] | int) -> frozenset:
    """Integer box prod_c [lo_c, hi_c] (inclusive) in Z^d."""
    if ctx.kind != "zd":
        raise GroupError("boxes live in Z^d")
    lo = [lo] * ctx.d if isinstance(lo, int) else list(lo)
    hi = [hi] * ctx.d if isinstance(hi, int) else list(hi)
    return frozenset(itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi))))


def g_interval(ctx: GroupContext, lo: int, hi: int) -> frozenset:
    """{g^lo, ..., g^hi} in a semidirect context (empty if lo > hi)."""
    return frozenset(ctx.g_power(i) for i in range(lo, hi + 1))


def convention_k(ctx: GroupContext, convention: str = "e_g") -> frozenset:
    """The set used to measure invariance in the g direction.

    ``literal`` is {g}, for which every set is vacuously invariant;
    ``e_g`` is {e, g}, whose boundary of an interval has exactly two points.
    """
    if convention == "literal":
        return frozenset({ctx.g_power(1)})
    if convention == "e_g":
        return frozenset({ctx.identity(), ctx.g_power(1)})
    raise GroupError(f"unknown convention {convention!r}")
