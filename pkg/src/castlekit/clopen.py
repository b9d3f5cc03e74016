"""Product odometers, their cylinder clopen algebra, towers and castles.

A point of the space is a pair ``(x, y)`` with ``x`` in the rank-``d``
``p``-adic integers (the H-factor) and ``y`` in the ``q``-adic integers (the
g-factor, absent for plain Z^d contexts).  The element ``h g^i`` acts by

    (x, y) -> (alpha^i x + h, y + i)

which satisfies g(t z) = alpha(t)(g z) and is free.  Everything is stored at
a finite depth ``(mh, mg)``: ``x mod p^mh`` and ``y mod q^mg``.  Because
alpha and alpha^{-1} are integral they preserve p^m Z^d, so each group element
permutes the residues at a fixed depth and all set operations are exact.

Residues are packed into one int64 ``key = enc(x) * Q + y``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .group_core import GroupContext, GroupError, check_invariance

Depth = tuple[int, int]


class DepthExhausted(ValueError):
    pass


class InvarianceUnreachable(ValueError):
    pass


@dataclass(frozen=True)
class OdometerSpace:
    ctx: GroupContext
    p: int = 2
    q: Optional[int] = None

    def __post_init__(self):
        if self.ctx.kind == "finite":
            raise GroupError("odometer spaces need a Z^d or H x| Z context")
        if self.ctx.kind == "semidirect" and self.q is None:
            object.__setattr__(self, "q", 2)
        if self.ctx.kind == "zd":
            object.__setattr__(self, "q", None)

    @property
    def d(self) -> int:
        return self.ctx.d

    @property
    def has_g(self) -> bool:
        return self.ctx.kind == "semidirect"

    def moduli(self, depth: Depth) -> tuple[int, int]:
        mh, mg = depth
        if not self.has_g and mg:
            raise ValueError("Z^d spaces have no g-factor depth")
        P = self.p ** mh
        Q = self.q ** mg if self.has_g else 1
        if self.d * P * P >= 2 ** 62 or P ** self.d * Q >= 2 ** 62:
            raise DepthExhausted(f"depth {depth} exceeds int64 residue packing")
        return P, Q

    def size(self, depth: Depth) -> int:
        P, Q = self.moduli(depth)
        return P ** self.d * Q

    def cylinder_diameter(self, depth: Depth) -> Fraction:
        """Diameter of a depth cylinder in the max of the p-adic and q-adic metrics."""
        mh, mg = depth
        dh = Fraction(1, self.p ** mh)
        return max(dh, Fraction(1, self.q ** mg)) if self.has_g else dh

    # packing
    def encode(self, depth: Depth, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        P, Q = self.moduli(depth)
        key = np.zeros(len(Y), dtype=np.int64)
        for c in range(self.d):
            key = key * P + np.mod(X[:, c], P)
        return key * Q + np.mod(Y, Q)

    def decode(self, depth: Depth, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        P, Q = self.moduli(depth)
        keys = np.asarray(keys, dtype=np.int64)
        Y = keys % Q
        rest = keys // Q
        X = np.empty((len(keys), self.d), dtype=np.int64)
        for c in range(self.d - 1, -1, -1):
            X[:, c] = rest % P
            rest = rest // P
        return X, Y

    def alpha_mod(self, i: int, P: int) -> np.ndarray:
        m = self.ctx.alpha_power(i)
        return np.array([[v % P for v in row] for row in m], dtype=np.int64)

    def act_keys(self, a, depth: Depth, keys: np.ndarray) -> np.ndarray:
        """Keys of a.z for z ranging over the given keys (a bijection)."""
        X, Y = self.decode(depth, keys)
        h, i = self.split(a)
        return self.encode(depth, self._twist(X, i, depth) + np.array(h, dtype=np.int64), Y + i)

    def split(self, a) -> tuple[tuple[int, ...], int]:
        if self.has_g:
            return tuple(a[0]), int(a[1])
        return tuple(a), 0

    def _twist(self, X: np.ndarray, i: int, depth: Depth) -> np.ndarray:
        if i == 0 or not self.has_g:
            return X
        P, _ = self.moduli(depth)
        return np.mod(X @ self.alpha_mod(i, P).T, P)

    def whole(self, depth: Depth = (0, 0)) -> "ClopenSet":
        return ClopenSet(self, depth, np.arange(self.size(depth), dtype=np.int64))

    def empty(self, depth: Depth = (0, 0)) -> "ClopenSet":
        return ClopenSet(self, depth, np.zeros(0, dtype=np.int64))

    def cylinder(self, depth: Depth, x: Sequence[int], y: int = 0) -> "ClopenSet":
        X = np.array([list(x)], dtype=np.int64)
        return ClopenSet(self, depth, self.encode(depth, X, np.array([y], dtype=np.int64)))

    def point(self, depth: Depth, x: Sequence[int], y: int = 0) -> "Point":
        P, Q = self.moduli(depth)
        return Point(self, depth, tuple(int(v) % P for v in x), int(y) % Q)


@dataclass(frozen=True)
class Point:
    """A point known to a finite working depth (its residue tower is implicit)."""

    space: OdometerSpace
    depth: Depth
    x: tuple[int, ...]
    y: int = 0

    def residue(self, depth: Depth) -> tuple[tuple[int, ...], int]:
        if depth[0] > self.depth[0] or depth[1] > self.depth[1]:
            raise DepthExhausted(f"point stored to depth {self.depth}, asked for {depth}")
        P, Q = self.space.moduli(depth)
        return tuple(v % P for v in self.x), self.y % Q

    def key(self, depth: Depth) -> int:
        x, y = self.residue(depth)
        return int(self.space.encode(depth, np.array([x], dtype=np.int64), np.array([y]))[0])


def act(a, x: Point) -> Point:
    """Exact action of a group element on a point (carries are the mod arithmetic)."""
    sp = x.space
    h, i = sp.split(a)
    P, Q = sp.moduli(x.depth)
    xs = x.x
    if i and sp.has_g:
        xs = tuple(sum(c * v for c, v in zip(row, xs)) for row in sp.ctx.alpha_power(i))
    return Point(sp, x.depth, tuple((v + t) % P for v, t in zip(xs, h)), (x.y + i) % Q)


class ClopenSet:
    """Finite union of same-depth cylinders, stored as sorted residue keys."""

    __slots__ = ("space", "depth", "keys")

    def __init__(self, space: OdometerSpace, depth: Depth, keys):
        self.space = space
        self.depth = (int(depth[0]), int(depth[1]))
        k = np.unique(np.asarray(keys, dtype=np.int64))
        k.flags.writeable = False
        self.keys = k

    def __repr__(self):
        return f"ClopenSet(depth={self.depth}, cylinders={len(self.keys)})"

    def __len__(self):
        return len(self.keys)

    def refine(self, depth: Depth) -> "ClopenSet":
        if depth == self.depth:
            return self
        mh, mg = self.depth
        nh, ng = depth
        if nh < mh or ng < mg:
            raise ValueError("can only refine to a deeper depth")
        sp = self.space
        P0, Q0 = sp.moduli(self.depth)
        P1, Q1 = sp.moduli(depth)
        X, Y = sp.decode(self.depth, self.keys)
        lifts_x = np.array(list(itertools.product(range(P1 // P0), repeat=sp.d)), dtype=np.int64) * P0
        lifts_y = np.arange(Q1 // Q0, dtype=np.int64) * Q0
        Xn = (X[:, None, None, :] + lifts_x[None, :, None, :])
        Yn = (Y[:, None, None] + lifts_y[None, None, :])
        Xn = np.broadcast_to(Xn, (len(X), len(lifts_x), len(lifts_y), sp.d)).reshape(-1, sp.d)
        Yn = np.broadcast_to(Yn, (len(X), len(lifts_x), len(lifts_y))).reshape(-1)
        return ClopenSet(sp, depth, sp.encode(depth, Xn, Yn))

    def _common(self, other: "ClopenSet") -> tuple["ClopenSet", "ClopenSet"]:
        if other.space != self.space:
            raise ValueError("clopen sets live in different spaces")
        d = (max(self.depth[0], other.depth[0]), max(self.depth[1], other.depth[1]))
        return self.refine(d), other.refine(d)

    def union(self, other: "ClopenSet") -> "ClopenSet":
        a, b = self._common(other)
        return ClopenSet(a.space, a.depth, np.union1d(a.keys, b.keys))

    def intersection(self, other: "ClopenSet") -> "ClopenSet":
        a, b = self._common(other)
        return ClopenSet(a.space, a.depth, np.intersect1d(a.keys, b.keys, assume_unique=True))

    def difference(self, other: "ClopenSet") -> "ClopenSet":
        a, b = self._common(other)
        return ClopenSet(a.space, a.depth, np.setdiff1d(a.keys, b.keys, assume_unique=True))

    def complement(self) -> "ClopenSet":
        return self.space.whole(self.depth).difference(self)

    def translate(self, a) -> "ClopenSet":
        return ClopenSet(self.space, self.depth, self.space.act_keys(a, self.depth, self.keys))

    def measure(self) -> Fraction:
        """Haar measure, the unique G-invariant probability measure."""
        return Fraction(len(self.keys), self.space.size(self.depth))

    def is_empty(self) -> bool:
        return len(self.keys) == 0

    def issubset(self, other: "ClopenSet") -> bool:
        a, b = self._common(other)
        return bool(np.isin(a.keys, b.keys, assume_unique=True).all())

    def isdisjoint(self, other: "ClopenSet") -> bool:
        a, b = self._common(other)
        return len(np.intersect1d(a.keys, b.keys, assume_unique=True)) == 0

    def __contains__(self, x: Point) -> bool:
        k = x.key(self.depth)
        i = np.searchsorted(self.keys, k)
        return bool(i < len(self.keys) and self.keys[i] == k)

    def __eq__(self, other):
        if not isinstance(other, ClopenSet):
            return NotImplemented
        a, b = self._common(other)
        return np.array_equal(a.keys, b.keys)

    def __hash__(self):
        raise TypeError("ClopenSet is not hashable; use .keys")

    def cylinders(self) -> Iterator["ClopenSet"]:
        for k in self.keys:
            yield ClopenSet(self.space, self.depth, [k])

    def fiber_counts(self) -> np.ndarray:
        """Number of H-residues in each g-fiber y mod q^mg."""
        _, Q = self.space.moduli(self.depth)
        return np.bincount(self.keys % Q, minlength=Q)


def clopen_ops(A: ClopenSet, B: ClopenSet) -> dict:
    """All binary/unary algebra results for A and B at their common depth."""
    return {
        "union": A.union(B),
        "intersection": A.intersection(B),
        "difference": A.difference(B),
        "complement": A.complement(),
        "measure": A.measure(),
    }


class Rectangle:
    """The shape {g^a b : lo <= a <= hi, b in block} inside H x| Z.

    Behaves as a finite subset (iteration, ``len``, membership) but keeps the
    product structure so footprints and boundaries are cheap.
    """

    __slots__ = ("ctx", "lo", "hi", "block")

    def __init__(self, ctx: GroupContext, lo: int, hi: int, block: frozenset):
        self.ctx, self.lo, self.hi, self.block = ctx, lo, hi, frozenset(block)

    def __len__(self):
        return max(0, self.hi - self.lo + 1) * len(self.block)

    def __iter__(self):
        for a in range(self.lo, self.hi + 1):
            m = self.ctx.alpha_power(a)
            for b in self.block:
                yield (tuple(sum(c * v for c, v in zip(row, b)) for row in m), a)

    def __contains__(self, el):
        h, a = el
        if not self.lo <= a <= self.hi:
            return False
        return self.ctx.apply_alpha(-a, tuple(h)) in self.block

    def __eq__(self, other):
        if isinstance(other, Rectangle):
            return (self.lo, self.hi, self.block) == (other.lo, other.hi, other.block) or (
                len(self) == len(other) == 0)
        return frozenset(self) == other

    def __hash__(self):
        return hash((self.lo, self.hi, self.block))

    def __repr__(self):
        return f"Rectangle(g^[{self.lo},{self.hi}] x {len(self.block)} columns)"

    def as_set(self) -> frozenset:
        return frozenset(self)


@dataclass(frozen=True)
class Tower:
    shape: object
    base: ClopenSet


@dataclass(frozen=True)
class Castle:
    towers: tuple = field(default_factory=tuple)

    def depth(self) -> Depth:
        ds = [t.base.depth for t in self.towers] or [(0, 0)]
        return (max(d[0] for d in ds), max(d[1] for d in ds))


def level_keys(shape, base: ClopenSet, depth: Optional[Depth] = None) -> np.ndarray:
    """Concatenated keys of s.V for s in the shape (with repetition)."""
    sp = base.space
    V = base.refine(depth) if depth else base
    depth = V.depth
    if len(V.keys) == 0 or len(shape) == 0:
        return np.zeros(0, dtype=np.int64)
    X, Y = sp.decode(depth, V.keys)
    P, _ = sp.moduli(depth)
    out = []
    if isinstance(shape, Rectangle):
        B = np.array(sorted(shape.block), dtype=np.int64).reshape(-1, sp.d)
        pts = (X[None, :, :] + B[:, None, :]).reshape(-1, sp.d)
        ys = np.broadcast_to(Y[None, :], (len(B), len(Y))).reshape(-1)
        for a in range(shape.lo, shape.hi + 1):
            out.append(sp.encode(depth, sp._twist(pts, a, depth), ys + a))
        return np.concatenate(out)
    by_power: dict[int, list] = {}
    for s in shape:
        h, i = sp.split(s)
        by_power.setdefault(i, []).append(h)
    for i, hs in sorted(by_power.items()):
        Xi = sp._twist(X, i, depth)
        Hs = np.array(hs, dtype=np.int64).reshape(-1, sp.d)
        pts = (Xi[None, :, :] + Hs[:, None, :]).reshape(-1, sp.d)
        ys = np.broadcast_to(Y[None, :] + i, (len(Hs), len(Y))).reshape(-1)
        out.append(sp.encode(depth, pts, ys))
    return np.concatenate(out)


def footprint(tower: Tower, depth: Optional[Depth] = None) -> ClopenSet:
    V = tower.base.refine(depth) if depth else tower.base
    return ClopenSet(V.space, V.depth, level_keys(tower.shape, V))


def check_tower(S, V: ClopenSet) -> bool:
    """Levels sV, s in S, pairwise disjoint (translates are bijections, so
    this is equivalent to no repeated key among them)."""
    keys = level_keys(S, V)
    return len(np.unique(keys)) == len(keys)


def check_castle(castle: Castle) -> bool:
    if not castle.towers:
        return True
    depth = castle.depth()
    allkeys = [level_keys(t.shape, t.base, depth) for t in castle.towers]
    total = sum(len(k) for k in allkeys)
    return len(np.unique(np.concatenate(allkeys))) == total


def castle_footprint(castle: Castle) -> ClopenSet:
    sp = castle.towers[0].base.space
    depth = castle.depth()
    keys = [level_keys(t.shape, t.base, depth) for t in castle.towers]
    return ClopenSet(sp, depth, np.concatenate(keys) if keys else [])


def owner_array(castle: Castle, depth: Optional[Depth] = None) -> np.ndarray:
    """Tower index of the base holding each residue at ``depth`` (-1 outside the bases)."""
    depth = depth or castle.depth()
    sp = castle.towers[0].base.space
    owner = np.full(sp.size(depth), -1, dtype=np.int64)
    for idx, t in enumerate(castle.towers):
        owner[t.base.refine(depth).keys] = idx
    return owner


def locate_patch_array(x: Point, hs: np.ndarray, powers: np.ndarray, owner: np.ndarray,
                       depth: Depth) -> np.ndarray:
    """Vectorised ``locate_patch``: row n is the window element h_n g^{powers[n]}."""
    sp = x.space
    x0, y0 = x.residue(depth)
    P, _ = sp.moduli(depth)
    hs = np.asarray(hs, dtype=np.int64).reshape(-1, sp.d)
    powers = np.asarray(powers, dtype=np.int64)
    base = np.array([x0], dtype=np.int64)
    uniq, inv = np.unique(powers, return_inverse=True)
    # one twisted copy of x per distinct power, then broadcast along the window
    twisted = np.concatenate([sp._twist(base, int(i), depth) for i in uniq]) if len(uniq) else base[:0]
    X = twisted[inv] + hs
    return owner[sp.encode(depth, X, y0 + powers)]


def locate_patch(x: Point, window: Iterable, castle: Castle) -> dict:
    """For each w in the window, the index of the tower whose base holds w.x (None if no base does)."""
    depth = castle.depth()
    owner = owner_array(castle, depth)
    window = list(window)
    if not window:
        return {}
    sp = x.space
    parts = [sp.split(w) for w in window]
    hs = np.array([h for h, _ in parts], dtype=np.int64)
    powers = np.array([i for _, i in parts], dtype=np.int64)
    idx = locate_patch_array(x, hs, powers, owner, depth)
    return {w: (None if v < 0 else int(v)) for w, v in zip(window, idx)}


def _box_shape(ctx: GroupContext, p: int, m: int) -> frozenset:
    side = range(p ** m)
    hs = itertools.product(side, repeat=ctx.d)
    if ctx.kind == "semidirect":
        return frozenset((h, 0) for h in hs)
    return frozenset(hs)


def _window_shape(ctx: GroupContext, window: Iterable, S: frozenset) -> frozenset:
    return frozenset(ctx.compose(w, s) for w in window for s in S)


def build_initial_castle(space: OdometerSpace, invariance=None, freeness_window=None, *,
                         h_depth: Optional[int] = None, max_depth: int = 12,
                         stagger: bool = False, order_seed: Optional[int] = None,
                         max_g_depth: int = 20) -> tuple[Castle, dict]:
    """Clopen Rokhlin castle with full footprint for the H-translation action.

    Shapes are the box [0, p^m)^d of H; bases are depth cylinders inside
    {x = 0 mod p^m} (or, with ``stagger``, alternating between offsets 0 and
    p^m/2 along the first coordinate depending on the parity of y), refined
    until (window . S, V) is a tower for every base.  Returns the castle and
    a report dict.
    """
    ctx = space.ctx
    window = list(freeness_window) if freeness_window is not None else [ctx.identity()]
    report: dict = {}
    if h_depth is None:
        if invariance is None:
            raise ValueError("need either h_depth or an invariance target")
        K, delta = invariance
        for m in range(0, max_depth + 1):
            if m and check_invariance(ctx, K, delta, _box_shape(ctx, space.p, m))[0]:
                h_depth = m
                break
        else:
            raise InvarianceUnreachable(f"no box up to depth {max_depth} is invariant")
    m = h_depth
    S = _box_shape(ctx, space.p, m)
    if invariance is not None:
        ok, ratio = check_invariance(ctx, invariance[0], invariance[1], S)
        report["shape_invariance"] = {"ok": ok, "ratio": ratio}
    WS = _window_shape(ctx, window, S)
    P = space.p ** m
    if stagger and (not space.has_g or P < 2):
        raise ValueError("stagger needs a g-factor and p^m >= 2")

    def bases(mg: int, mh: int):
        depth = (mh, mg)
        Q = space.q ** mg if space.has_g else 1
        Pm = space.p ** mh
        lifts = itertools.product(range(0, Pm, P), repeat=space.d)
        out = []
        for lift in lifts:
            for y in range(Q):
                x = list(lift)
                if stagger and y % 2 == 1:
                    x[0] = (x[0] + P // 2) % Pm
                out.append((tuple(x), y, depth))
        return out

    mh, mg = m, 0
    while True:
        cands = bases(mg, mh)
        reps = {}
        for x, y, depth in cands:
            # y-shifts commute with the action, so one base per H-residue suffices
            key = (x, y % 2) if (space.has_g and stagger) else (x,)
            reps.setdefault(key if space.has_g else (x, y), (x, y, depth))
        if all(check_tower(WS, space.cylinder(depth, x, y)) for x, y, depth in reps.values()):
            break
        if space.has_g and mg < max_g_depth:
            mg += 1
        elif mh < max_depth + 8:
            mh += 1
        else:
            raise DepthExhausted("freeness window never separates at the configured depth caps")
    if stagger and mg == 0:
        mg = 1
        cands = bases(mg, mh)
    if order_seed is not None:
        import random
        random.Random(order_seed).shuffle(cands)
    towers = tuple(Tower(S, space.cylinder(depth, x, y)) for x, y, depth in cands)
    castle = Castle(towers)
    report.update({"h_depth": m, "base_depth": (mh, mg), "towers": len(towers)})
    return castle, report
