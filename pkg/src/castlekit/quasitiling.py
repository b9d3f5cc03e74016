"""Ornstein-Weiss quasitilings and exact tiling certificates.

The greedy pass runs from the largest set F_m down to F_1.  At each level it
scans centres in canonical order twice: first accepting translates F_i c that
lie in E and miss everything covered so far, then accepting those with at
most an epsilon fraction already covered.  An accepted tile is the uncovered
part of its translate.  The quasitiling clauses are checked exactly before anything is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .group_core import GroupContext, GroupError, box, check_invariance, k_boundary


class PreconditionError(ValueError):
    pass


class ContractViolation(AssertionError):
    pass


class SequenceTooLarge(ValueError):
    pass


def min_levels(epsilon) -> int:
    """Least m with (1 - epsilon/2)^m < epsilon."""
    eps = Fraction(epsilon)
    if not 0 < eps < Fraction(1, 2):
        raise ValueError("need 0 < epsilon < 1/2")
    m, pw = 1, 1 - eps / 2
    while pw >= eps:
        pw *= 1 - eps / 2
        m += 1
    return m


@dataclass(frozen=True)
class TowerSequence:
    ctx: GroupContext
    sets: tuple
    epsilon: Fraction

    @property
    def m(self) -> int:
        return len(self.sets)

    def check(self) -> list[str]:
        """Violated hypotheses, as human-readable strings (empty if none)."""
        errs = []
        eps = Fraction(self.epsilon)
        e = self.ctx.identity()
        if not self.sets or e not in self.sets[0]:
            errs.append("F_1 must contain e")
        if not (1 - eps / 2) ** self.m < eps:
            errs.append(f"(1-eps/2)^m >= eps for m={self.m}")
        for k in range(1, self.m):
            if not self.sets[k - 1] <= self.sets[k]:
                errs.append(f"F_{k} not contained in F_{k + 1}")
            elif not _box_invariant(self.ctx, self.sets[k - 1], eps / 8, self.sets[k]):
                errs.append(f"F_{k + 1} is not (F_{k}, eps/8)-invariant")
        return errs


def _box_invariant(ctx, K, delta, F) -> bool:
    return check_invariance(ctx, K, delta, F)[0]


def _box_boundary_size(d: int, a: int, L: int) -> int:
    # symmetric box of radius L against symmetric box of radius a
    if a == 0:
        return 0
    outer = (2 * L + 2 * a + 1) ** d
    inner = max(0, 2 * L - 2 * a + 1) ** d
    return outer - inner


def _h_context(ctx: GroupContext) -> GroupContext:
    if ctx.kind == "zd":
        return ctx
    if ctx.kind == "semidirect":
        return ctx.H
    raise GroupError("Foelner boxes need Z^d or H x| Z")


def build_foelner_sequence(epsilon, ctx: GroupContext, *, seed_radius: int = 1,
                           nontrivial: int = 1, size_cap: int = 10 ** 6,
                           levels: Optional[int] = None) -> TowerSequence:
    """Nested symmetric boxes satisfying the quasitiling hypotheses.

    The lowest ``m - nontrivial`` levels are {e}; the first nontrivial box has
    radius ``seed_radius`` and each later one the least radius making it
    (F_{k-1}, eps/8)-invariant.  ``m`` is the least admissible length unless
    ``levels`` overrides it.
    """
    eps = Fraction(epsilon)
    m = levels if levels is not None else min_levels(eps)
    hctx = _h_context(ctx)
    d = hctx.d
    radii = [0] * max(0, m - nontrivial)
    prev = 0
    for k in range(min(nontrivial, m)):
        if k == 0 and prev == 0:
            R = seed_radius
        else:
            R = prev
            while _box_boundary_size(d, prev, R) > eps / 8 * (2 * R + 1) ** d:
                R = max(R + 1, R * 2 if _box_boundary_size(d, prev, 2 * R + 1) > eps / 8 * (4 * R + 3) ** d else R + 1)
            # step back to the least radius
            while R > prev and _box_boundary_size(d, prev, R - 1) <= eps / 8 * (2 * R - 1) ** d:
                R -= 1
        if (2 * R + 1) ** d > size_cap:
            raise SequenceTooLarge(f"level {len(radii) + 1} needs {(2 * R + 1) ** d} elements")
        radii.append(R)
        prev = R
    sets = tuple(box(hctx, -R, R) for R in radii)
    seq = TowerSequence(hctx, sets, eps)
    errs = seq.check()
    if errs:
        raise ContractViolation("; ".join(errs))
    return seq


@dataclass
class QuasiTiling:
    seq: TowerSequence
    # per level i (0-based): list of (centre c, shrunken tile F_{i,c} as a subset of F_i)
    tiles: list = field(default_factory=list)

    def covered(self) -> frozenset:
        comp = self.seq.ctx.compose
        return frozenset(comp(f, c) for lvl in self.tiles for c, T in lvl for f in T)

    def full_union(self) -> frozenset:
        comp = self.seq.ctx.compose
        return frozenset(comp(f, c) for i, lvl in enumerate(self.tiles)
                         for c, _ in lvl for f in self.seq.sets[i])


@dataclass(frozen=True)
class TilingCertificate:
    pairs: tuple  # (tile: frozenset, translate) with the tile right-translated

    def translates(self, ctx: GroupContext):
        for tile, t in self.pairs:
            yield frozenset(ctx.compose(f, t) for f in tile)


def verify_tiling(ctx: GroupContext, A: Iterable, cert: TilingCertificate) -> bool:
    """The translates partition A exactly."""
    A = frozenset(A)
    seen: set = set()
    total = 0
    for T in cert.translates(ctx):
        total += len(T)
        seen |= T
    return total == len(seen) and seen == A


def check_quasitiling(E: frozenset, qt: QuasiTiling) -> list[str]:
    seq, eps = qt.seq, Fraction(qt.seq.epsilon)
    errs = []
    ctx = seq.ctx
    seen: set = set()
    total = 0
    for i, lvl in enumerate(qt.tiles):
        Fi = seq.sets[i]
        for c, T in lvl:
            if not T <= Fi:
                errs.append(f"tile at level {i + 1} centre {c} not inside F_{i + 1}")
            if len(T) < (1 - eps) * len(Fi):
                errs.append(f"tile at level {i + 1} centre {c} shrunk below (1-eps)|F|")
            Tc = {ctx.compose(f, c) for f in T}
            total += len(Tc)
            seen |= Tc
    if total != len(seen):
        errs.append("shrunken tiles overlap")
    U = qt.full_union()
    if not U <= E:
        errs.append("union of translates leaves E")
    if len(U) < (1 - eps) * len(E):
        errs.append("union covers less than (1-eps)|E|")
    return errs


def quasitile(E: Iterable, seq: TowerSequence, *, check_precondition: bool = True) -> QuasiTiling:
    E = frozenset(E)
    ctx = seq.ctx
    eps = Fraction(seq.epsilon)
    if check_precondition:
        ok, ratio = check_invariance(ctx, seq.sets[-1], eps / 4, E)
        if not ok:
            raise PreconditionError(f"E is not (F_m, eps/4)-invariant (ratio {ratio})")
    comp = ctx.compose
    order = sorted(E, key=ctx.sort_key)
    covered: set = set()
    tiles: list = [[] for _ in seq.sets]
    for i in range(seq.m - 1, -1, -1):
        F = sorted(seq.sets[i], key=ctx.sort_key)
        # disjoint translates first, then ones overlapping the cover by at most eps|F|
        for allowed in sorted({0, math.floor(eps * len(F))}):
            for c in order:
                hits = 0
                ok = True
                for f in F:
                    fc = comp(f, c)
                    if fc not in E:
                        ok = False
                        break
                    if fc in covered:
                        hits += 1
                        if hits > allowed:
                            ok = False
                            break
                if not ok:
                    continue
                T = frozenset(f for f in F if comp(f, c) not in covered)
                covered.update(comp(f, c) for f in T)
                tiles[i].append((c, T))
    qt = QuasiTiling(seq, tiles)
    errs = check_quasitiling(E, qt)
    if errs:
        raise ContractViolation("; ".join(errs))
    return qt


@dataclass(frozen=True)
class TilingCollection:
    """The finite collection of all F inside some F_j with |F| >= (1-eps)|F_j|,
    represented by its defining sequence and a membership predicate."""

    seq: TowerSequence
    K: frozenset = frozenset()
    delta: Fraction = Fraction(0)

    @property
    def union(self) -> frozenset:
        return self.seq.sets[-1]

    def __contains__(self, F) -> bool:
        F = frozenset(F)
        eps = Fraction(self.seq.epsilon)
        return any(F <= Fj and len(F) >= (1 - eps) * len(Fj) for Fj in self.seq.sets)

    def members_invariant(self) -> bool:
        """Every member is (K, delta)-invariant; checked on the levels, which
        is what the construction guarantees for (and all members inherit via
        the parameters when the hypotheses hold)."""
        if not self.K:
            return True
        return all(check_invariance(self.seq.ctx, self.K, self.delta, Fj)[0] for Fj in self.seq.sets)


def tiling_collection(K: Iterable, delta, epsilon, ctx: GroupContext, *,
                      size_cap: int = 10 ** 6) -> TilingCollection:
    """Collection whose levels are all (K, delta)-invariant boxes."""
    hctx = _h_context(ctx)
    K = frozenset(K)
    delta = Fraction(delta)
    if not K:
        raise ValueError("K must be nonempty")

    def ok(R):
        return check_invariance(hctx, K, delta, box(hctx, -R, R))[0]

    # doubling then bisection; the least radius found is re-verified exactly
    hi = 0
    while not ok(hi):
        hi = max(1, 2 * hi)
        if (2 * hi + 1) ** hctx.d > size_cap:
            raise SequenceTooLarge("no admissible first level under the size cap")
    lo = hi // 2
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    radius = hi
    m = min_levels(epsilon)
    seq = build_foelner_sequence(epsilon, hctx, seed_radius=radius, nontrivial=m, size_cap=size_cap)
    coll = TilingCollection(seq, K, delta)
    if not coll.members_invariant():
        raise ContractViolation("a level failed (K, delta)-invariance")
    return coll


def extract_tileable(E: Iterable, collection: TilingCollection, *,
                     check_precondition: bool = True) -> tuple[frozenset, TilingCertificate]:
    """A collection-tileable E' inside E with |E'| >= (1-eps)|E| and its certificate."""
    E = frozenset(E)
    seq = collection.seq
    if check_precondition:
        ok, ratio = check_invariance(seq.ctx, collection.union, Fraction(seq.epsilon) / 4, E)
        if not ok:
            raise PreconditionError(f"E is not (union F, eps/4)-invariant (ratio {ratio})")
    qt = quasitile(E, seq, check_precondition=False)
    pairs = tuple((T, c) for lvl in qt.tiles for c, T in lvl)
    cert = TilingCertificate(pairs)
    Ep = qt.covered()
    if not verify_tiling(seq.ctx, Ep, cert):
        raise ContractViolation("certificate does not partition E'")
    if any(T not in collection for T, _ in pairs):
        raise ContractViolation("tile outside the collection")
    if len(Ep) < (1 - Fraction(seq.epsilon)) * len(E):
        raise ContractViolation("|E'| < (1-eps)|E|")
    return Ep, cert
