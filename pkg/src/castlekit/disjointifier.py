"""Partition a Foelner set S against n rows of tileable sets and certify that
the pieces failing (K, delta)-invariance cover at most delta|S|.

Pieces are indexed by patterns: a tuple with one entry per row, 0 when the
element lies in no set of that row and j (1-based) when it lies in B_{i,j}.
Only patterns realized by elements of S are ever materialized.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .group_core import (GroupContext, check_invariance, inverse_set, k_boundary,
                         product_set)
from .quasitiling import TilingCertificate, TilingCollection, verify_tiling


class HypothesisViolation(ValueError):
    pass


class BoundViolation(AssertionError):
    pass


@dataclass
class DisjointificationInstance:
    ctx: GroupContext
    S: frozenset
    rows: list  # rows[i] = list of (B_ij, TilingCertificate)
    K: frozenset
    delta: Fraction
    collection: Optional[TilingCollection] = None

    @property
    def n(self) -> int:
        return len(self.rows)

    def tiles(self):
        for row in self.rows:
            for _, cert in row:
                for tile, _ in cert.pairs:
                    yield tile

    def union_of_collection(self) -> frozenset:
        if self.collection is not None:
            return self.collection.union
        out: set = set()
        for tile in self.tiles():
            out |= tile
        return frozenset(out)

    def D(self) -> frozenset:
        U = self.union_of_collection()
        return product_set(self.ctx, U, inverse_set(self.ctx, U))

    def tile_delta(self) -> Fraction:
        return Fraction(self.delta) ** 3 / (8 * len(self.K) ** 2 * self.n)

    def s_delta(self) -> Fraction:
        return Fraction(self.delta) ** 2 / (4 * len(self.K))

    def check_hypotheses(self) -> list[str]:
        """Names of failed hypothesis clauses (empty when the instance is valid)."""
        errs = []
        ctx = self.ctx
        if not self.S:
            errs.append("S is empty")
        for i, row in enumerate(self.rows):
            seen: set = set()
            for j, (B, cert) in enumerate(row):
                if seen & B:
                    errs.append(f"row {i + 1} sets are not pairwise disjoint")
                seen |= B
                if not verify_tiling(ctx, B, cert):
                    errs.append(f"certificate of B_{i + 1},{j + 1} is invalid")
                if self.collection is not None and any(t not in self.collection for t, _ in cert.pairs):
                    errs.append(f"B_{i + 1},{j + 1} uses a tile outside the collection")
        td = self.tile_delta()
        for tile in set(self.tiles()):
            if not check_invariance(ctx, self.K, td, tile)[0]:
                errs.append(f"a tile is not (K, {td})-invariant")
                break
        if self.S and self.n:
            D = self.D()
            D2 = product_set(ctx, D, D)
            if not check_invariance(ctx, D2, self.s_delta(), self.S)[0]:
                errs.append(f"S is not (D^2, {self.s_delta()})-invariant")
        return errs


@dataclass
class PiecePartition:
    S: frozenset
    pieces: dict  # pattern -> nonempty frozenset B_omega
    flags: dict  # pattern -> True when B_omega fails (K, delta)-invariance
    ratios: dict = field(default_factory=dict)

    def omega0_union(self) -> frozenset:
        out: set = set()
        for w, B in self.pieces.items():
            if self.flags[w]:
                out |= B
        return frozenset(out)

    def is_partition(self) -> bool:
        total = sum(len(B) for B in self.pieces.values())
        union = frozenset().union(*self.pieces.values()) if self.pieces else frozenset()
        return total == len(union) and union == self.S and all(self.pieces.values())


def _row_index(row) -> dict:
    idx = {}
    for j, (B, _) in enumerate(row, start=1):
        for b in B:
            idx[b] = j
    return idx


def pattern_of(x, row_indices) -> tuple:
    return tuple(ri.get(x, 0) for ri in row_indices)


def disjointify(inst: DisjointificationInstance, *, enforce: bool = True) -> PiecePartition:
    """All nonempty pieces B_omega, their Omega_0 flags, and the bound check.

    With ``enforce`` the hypotheses are verified up front and a bound failure
    raises; without it the partition is returned for inspection.
    """
    if enforce:
        errs = inst.check_hypotheses()
        if errs:
            raise HypothesisViolation("; ".join(errs))
    row_indices = [_row_index(row) for row in inst.rows]
    groups: dict = {}
    for s in inst.S:
        groups.setdefault(pattern_of(s, row_indices), set()).add(s)
    pieces = {w: frozenset(v) for w, v in groups.items()}
    flags, ratios = {}, {}
    for w, B in pieces.items():
        ok, ratio = check_invariance(inst.ctx, inst.K, inst.delta, B)
        flags[w], ratios[w] = not ok, ratio
    part = PiecePartition(inst.S, pieces, flags, ratios)
    if enforce:
        rep = verify_bound(part, inst.delta, inst.S)
        if not rep["holds"]:
            raise BoundViolation(f"flagged pieces cover {rep['flagged']} > delta|S| = {rep['allowed']}")
    return part


def verify_bound(part: PiecePartition, delta, S) -> dict:
    S = frozenset(S)
    flagged = len(part.omega0_union())
    allowed = Fraction(delta) * len(S)
    partition_ok = part.S == S and part.is_partition()
    return {"flagged": flagged, "allowed": allowed, "size": len(S),
            "partition": partition_ok, "holds": partition_ok and flagged <= allowed,
            "pieces": len(part.pieces), "flagged_pieces": sum(part.flags.values())}


def brute_force_pieces(inst: DisjointificationInstance) -> dict:
    """Evaluate B_omega from its defining formula, omega by omega.

    Rows are decided one at a time (member of some B_{i,j}, or outside the
    whole row) and a branch is abandoned once its running set is empty, so
    only nonempty pieces are returned.  Shares no code with the pattern pass.
    """
    row_unions = [frozenset().union(*(B for B, _ in row)) if row else frozenset()
                  for row in inst.rows]
    out = {}

    def walk(i, cur, w):
        if not cur:
            return
        if i == inst.n:
            out[tuple(w)] = cur
            return
        walk(i + 1, cur - row_unions[i], w + [0])
        for j, (B, _) in enumerate(inst.rows[i], start=1):
            walk(i + 1, cur & B, w + [j])

    walk(0, frozenset(inst.S), [])
    return out


def brute_force_flags(inst: DisjointificationInstance, pieces: dict) -> dict:
    """Omega_0 membership straight from the boundary definition."""
    ctx, K = inst.ctx, list(inst.K)
    flags = {}
    for w, B in pieces.items():
        bd = set()
        for t in {ctx.compose(ctx.inverse(k), b) for k in K for b in B}:
            hits = [ctx.compose(k, t) in B for k in K]
            if any(hits) and not all(hits):
                bd.add(t)
        flags[w] = len(bd) > Fraction(inst.delta) * len(B)
    return flags


@dataclass
class GammaRefinement:
    pieces: dict  # gamma -> E_gamma; gamma has per row None or (j, t)
    containment: dict  # gamma -> pattern omega with E_gamma inside B_omega
    t_prime: list  # t_prime[i][j] = translates whose tile lies in S
    t_dprime: list  # tiles inside S minus its D-boundary
    checks: dict


def gamma_refinement(inst: DisjointificationInstance) -> GammaRefinement:
    """The refined pieces E_gamma built from individual tiles.

    The piece for the empty index set is taken inside S minus its D-boundary,
    which keeps every E_gamma a finite subset of S.
    """
    ctx, S, K = inst.ctx, inst.S, inst.K
    D = inst.D()
    interior = S - k_boundary(ctx, D, S)
    comp = ctx.compose
    t_prime, t_dprime = [], []
    tile_of = []  # per row: element -> (j, t, translated tile) for tiles inside the interior
    mult_lhs = 0
    boundary_union_tiles: set = set()
    for row in inst.rows:
        tp_row, tpp_row, owner = [], [], {}
        for j, (_, cert) in enumerate(row, start=1):
            tp, tpp = [], []
            for tile, t in cert.pairs:
                Ft = frozenset(comp(f, t) for f in tile)
                if Ft <= S:
                    tp.append(t)
                    mult_lhs += len(Ft)
                    boundary_union_tiles |= k_boundary(ctx, K, Ft)
                if Ft <= interior:
                    tpp.append(t)
                    for x in Ft:
                        owner[x] = (j, t)
            tp_row.append(tp)
            tpp_row.append(tpp)
        t_prime.append(tp_row)
        t_dprime.append(tpp_row)
        tile_of.append(owner)
    row_indices = [_row_index(row) for row in inst.rows]
    groups: dict = {}
    for x in interior:
        gamma = []
        keep = True
        for i in range(inst.n):
            if x in row_indices[i]:
                jt = tile_of[i].get(x)
                if jt is None:
                    keep = False
                    break
                gamma.append(jt)
            else:
                gamma.append(None)
        if keep:
            groups.setdefault(tuple(gamma), set()).add(x)
    pieces = {g: frozenset(v) for g, v in groups.items()}
    containment = {g: tuple(0 if jt is None else jt[0] for jt in g) for g in pieces}

    boundaries = {g: k_boundary(ctx, K, E) for g, E in pieces.items()}
    union_bd = frozenset().union(*boundaries.values()) if boundaries else frozenset()
    sum_bd = sum(len(b) for b in boundaries.values())
    nonempty_I = [g for g in pieces if any(jt is not None for jt in g)]
    e_boundary = all(boundaries[g] <= boundary_union_tiles for g in nonempty_I)
    checks = {
        "e_boundary": e_boundary,
        "e_boundary2": (sum_bd, len(K) * len(union_bd)),
        "e_multiplicity": (mult_lhs, inst.n * len(S)),
    }
    return GammaRefinement(pieces, containment, t_prime, t_dprime, checks)


def refinement_consistent(inst: DisjointificationInstance, ref: GammaRefinement,
                          part: PiecePartition) -> bool:
    """Each E_gamma lies inside exactly the piece its pattern names."""
    for g, E in ref.pieces.items():
        w = ref.containment[g]
        if w not in part.pieces or not E <= part.pieces[w]:
            return False
    return True


# ---- randomized valid instances in Z -------------------------------------

def _interval_k_ratio_ok(ctx, K, delta, length) -> bool:
    return check_invariance(ctx, K, delta, frozenset((x,) for x in range(length)))[0]


def min_tile_length(ctx: GroupContext, K, delta) -> int:
    """Least interval length meeting the tile hypothesis (lengths beyond it keep it)."""
    L = 1
    while not _interval_k_ratio_ok(ctx, K, delta, L):
        L *= 2
    lo, hi = L // 2 + 1, L
    while lo < hi:
        mid = (lo + hi) // 2
        if _interval_k_ratio_ok(ctx, K, delta, mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def random_instance(rng: random.Random, n: int, delta, K=None, *,
                    spread: int = 4, size_cap: int = 10 ** 4,
                    max_sets: int = 4) -> DisjointificationInstance:
    """A random instance in Z meeting every hypothesis exactly.

    Tiles are intervals [0, l) with l in [L, L + spread], L minimal; S is the
    shortest interval meeting the D^2 hypothesis, padded by a random amount
    within ``size_cap``.  Rows are random runs of tiles grouped into sets.
    """
    ctx = GroupContext.zd(1)
    K = frozenset(K) if K is not None else frozenset({(0,), (1,)})
    delta = Fraction(delta)
    td = delta ** 3 / (8 * len(K) ** 2 * n)
    L = min_tile_length(ctx, K, td)
    top = L + spread
    radius = 2 * (top - 1)  # D^2 is the symmetric interval of this radius
    sd = delta ** 2 / (4 * len(K))
    N = max(1, math.ceil(4 * radius / sd))
    if N > size_cap:
        raise HypothesisViolation(f"S needs {N} > {size_cap} elements at n={n}, delta={delta}")
    N = rng.randint(N, size_cap)
    S = frozenset((x,) for x in range(N))
    rows = []
    for _ in range(n):
        row = []
        pos = rng.randint(-2 * top, top)
        while pos < N + top:
            if rng.random() < 0.3:
                pos += rng.randint(1, top)
                continue
            k = rng.randint(1, max_sets)
            pairs, B = [], set()
            for _ in range(k):
                ln = rng.randint(L, top)
                tile = frozenset((x,) for x in range(ln))
                pairs.append((tile, (pos,)))
                B.update((pos + x,) for x in range(ln))
                pos += ln
            row.append((frozenset(B), TilingCertificate(tuple(pairs))))
        rows.append(row)
    return DisjointificationInstance(ctx, S, rows, K, delta)
