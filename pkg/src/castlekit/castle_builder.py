"""Recursive construction of an H x| Z castle with rectangular Foelner shapes.

Starting from a clopen H-castle on a product odometer, every tower base V_k
gets a pattern table recording how the thin rectangles A B_j V_j meet the
partial orbit A^3 B_k x, and intervals A_{x,lambda} in <g> are assigned tower
by tower.  New intervals are obtained by filling, donation, appropriation and
synchronization, always keeping every nonempty interval at least floor(delta r)
long.  Every structural claim the construction relies on is checked while it
runs and a ConstructionError carries the local configuration when one fails.

Coordinates: an H-element is a tuple of ints, a g-interval is a pair (lo, hi)
of exponents (None when empty).  In the odometer model all membership data is
constant on each base cylinder, so each base is one pattern-table piece.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np

from .clopen import (Castle, ClopenSet, OdometerSpace, Rectangle, Tower, build_initial_castle,
                     castle_footprint, check_castle, level_keys,
                     locate_patch_array, owner_array)
from .density import h_density_bounds
from .disjointifier import DisjointificationInstance, disjointify
from .group_core import (GroupContext, check_invariance, convention_k, g_interval, k_boundary,
                         mat_vec, product_set, inverse_set)
from .quasitiling import (SequenceTooLarge, TilingCertificate, TilingCollection,
                          build_foelner_sequence, extract_tileable, tiling_collection)

Interval = Optional[tuple[int, int]]
_EMPTY_LO, _EMPTY_HI = 10 ** 9, -(10 ** 9)


class ConstructionError(RuntimeError):
    """A checked claim of the construction failed; ``diagnostics`` holds the
    local configuration (stage, base, pattern, neighbours, intervals)."""

    def __init__(self, kind: str, message: str, diagnostics: Optional[dict] = None):
        super().__init__(f"[{kind}] {message}")
        self.kind = kind
        self.diagnostics = diagnostics or {}


# ---- parameters -------------------------------------------------------------

def h_elements(ctx: GroupContext, K: Iterable) -> frozenset:
    """Accept H-elements either as plain tuples or as (h, 0) group elements."""
    out = set()
    for k in K:
        if ctx.kind == "semidirect" and len(k) == 2 and isinstance(k[1], int) and isinstance(k[0], tuple):
            if k[1] != 0:
                raise ValueError(f"{k} is not in H")
            k = k[0]
        k = tuple(int(v) for v in k)
        if len(k) != ctx.d:
            raise ValueError(f"{k} has the wrong rank")
        out.add(k)
    return frozenset(out)


def alpha_orbit(ctx: GroupContext, K: frozenset, lo: int, hi: int) -> frozenset:
    if ctx.alpha == tuple(tuple(int(i == j) for j in range(ctx.d)) for i in range(ctx.d)):
        return K
    return frozenset(mat_vec(ctx.alpha_power(i), k) for i in range(lo, hi + 1) for k in K)


def interval_invariant(length: int, delta, convention: str) -> bool:
    """Whether a g-interval of this length is invariant under the convention."""
    if length <= 0:
        return False
    if convention == "literal":
        return True
    return Fraction(2, length) <= Fraction(delta)


def least_r(delta, convention: str = "e_g") -> int:
    """Least r such that every interval of cardinality >= floor(delta r) is invariant."""
    delta = Fraction(delta)
    c0 = 1 if convention == "literal" else max(1, math.ceil(2 / delta))
    r = math.ceil(c0 / delta)
    while r > 1 and math.floor(delta * (r - 1)) >= c0:
        r -= 1
    return r


@dataclass(frozen=True)
class Parameters:
    ctx: GroupContext
    K: frozenset
    delta: Fraction
    epsilon: Fraction
    r: int
    beta: Fraction
    K1: frozenset  # union of alpha^i K over |i| <= 2r
    K2: frozenset  # union of alpha^i K over |i| <= 6r
    eta: Fraction
    convention: str = "e_g"

    @property
    def floor_dr(self) -> int:
        return math.floor(self.delta * self.r)

    @property
    def ext(self) -> int:
        return math.ceil(3 * self.delta * self.r)

    @property
    def A(self) -> tuple[int, int]:
        return (-self.r, self.r)

    @property
    def A_plus(self) -> tuple[int, int]:
        return (-(self.r + self.ext), self.r + self.ext)

    def to_json(self) -> dict:
        return {"delta": str(self.delta), "epsilon": str(self.epsilon), "r": self.r,
                "floor_delta_r": self.floor_dr, "A": list(self.A), "A_plus": list(self.A_plus),
                "beta": str(self.beta), "eta": str(self.eta), "K": sorted(map(list, self.K)),
                "K1_size": len(self.K1), "K2_size": len(self.K2), "convention": self.convention}


def setup_parameters(ctx: GroupContext, K: Iterable, delta, epsilon, *,
                     convention: str = "e_g", r: Optional[int] = None) -> Parameters:
    if ctx.kind != "semidirect":
        raise ValueError("the construction needs an H x| Z context")
    delta, epsilon = Fraction(delta), Fraction(epsilon)
    if not 0 < delta < Fraction(1, 12):
        raise ValueError("need 0 < delta < 1/12")
    if not 0 < epsilon:
        raise ValueError("need epsilon > 0")
    K = h_elements(ctx, K)
    if not K:
        raise ValueError("K must be nonempty")
    if r is None:
        r = least_r(delta, convention)
    fl = math.floor(delta * r)
    # ground truth for the threshold: an actual interval of that length
    if not fl or not check_invariance(ctx, convention_k(ctx, convention), delta, g_interval(ctx, 0, fl - 1))[0]:
        raise ValueError(f"r = {r} does not make intervals of length {fl} invariant")
    beta = min(epsilon / (4 * r + 1), delta)
    K1 = alpha_orbit(ctx, K, -2 * r, 2 * r)
    K2 = alpha_orbit(ctx, K, -6 * r, 6 * r)
    eta = min(beta ** 2 / (4 * len(K1)), epsilon / 4)
    return Parameters(ctx, K, delta, epsilon, r, beta, K1, K2, eta, convention)


# ---- inputs -----------------------------------------------------------------

@dataclass
class PreparedInputs:
    space: OdometerSpace
    castle: Castle
    collection: TilingCollection
    cores: dict  # shape (H-set) -> (B, TilingCertificate)
    report: dict


def _shape_h(ctx: GroupContext, shape) -> frozenset:
    if any(s[1] != 0 for s in shape):
        raise ValueError("initial shapes must lie in H")
    return frozenset(s[0] for s in shape)


def prepare_inputs(params: Parameters, space: OdometerSpace, *, h_depth: Optional[int] = None,
                   max_depth: int = 12, stagger: bool = False, order_seed: Optional[int] = None,
                   collection_size_cap: int = 10 ** 5) -> PreparedInputs:
    """Tiling collection, initial castle and tileable cores B_k.

    The collection is built for the full invariance target when that fits
    under the size cap; otherwise the singleton collection is used and the
    report says which hypotheses are unmet.
    """
    ctx = params.ctx
    H = ctx.H
    r = params.r
    report: dict = {}
    tile_delta = params.beta ** 3 / (8 * len(params.K1) * (8 * r + 1))
    try:
        collection = tiling_collection(params.K2, tile_delta, _collection_eps(params.epsilon), H,
                                       size_cap=collection_size_cap)
        report["collection"] = {"kind": "foelner", "levels": [len(f) for f in collection.seq.sets],
                                "hypotheses_met": True}
    except SequenceTooLarge as exc:
        seq = build_foelner_sequence(_collection_eps(params.epsilon), H, nontrivial=0)
        collection = TilingCollection(seq, params.K2, tile_delta)
        report["collection"] = {"kind": "singletons", "hypotheses_met": False,
                                "target": f"(K'', {tile_delta})", "reason": str(exc)}
    U = collection.union
    D = product_set(H, U, inverse_set(H, U))
    D2 = product_set(H, D, D)
    D2_g = frozenset((h, 0) for h in D2)
    window = [ctx.g_power(i) for i in range(-3 * r, 3 * r + 1)]
    castle, crep = build_initial_castle(space, invariance=(D2_g, params.eta), freeness_window=window,
                                        h_depth=h_depth, max_depth=max_depth, stagger=stagger,
                                        order_seed=order_seed)
    report["initial_castle"] = {k: (str(v) if isinstance(v, Fraction) else v) for k, v in crep.items()
                                if k != "shape_invariance"}
    if "shape_invariance" in crep:
        si = crep["shape_invariance"]
        report["initial_castle"]["shape_invariance"] = {"ok": si["ok"], "ratio": str(si["ratio"])}
    cores = {}
    ratios = []
    for tower in castle.towers:
        S = _shape_h(ctx, tower.shape)
        if S in cores:
            continue
        ok, ratio = check_invariance(H, U, Fraction(collection.seq.epsilon) / 4, S)
        Bk, cert = extract_tileable(S, collection, check_precondition=False)
        cores[S] = (Bk, cert)
        ratios.append({"shape_size": len(S), "core_size": len(Bk), "precondition": ok})
        if len(Bk) < (1 - params.epsilon) * len(S):
            raise ConstructionError("cores", "tileable core smaller than (1-eps)|S|")
    report["cores"] = ratios
    return PreparedInputs(space, castle, collection, cores, report)


def _collection_eps(epsilon: Fraction) -> Fraction:
    # the quasitiling theorem needs eps < 1/2
    return min(Fraction(epsilon), Fraction(49, 100))


# ---- pattern tables ---------------------------------------------------------

@dataclass
class BaseData:
    """One tower base: a cylinder U with residue (c, y), its core B and the
    partition of B into pattern blocks B_{U,lambda}."""

    idx: int
    U: ClopenSet
    c: tuple
    y: int
    shape_id: int
    blocks: list = field(default_factory=list)
    lookup: Optional[np.ndarray] = None  # block id over the core's bounding box, -1 outside
    invariant: list = field(default_factory=list)  # lambda in Lambda'
    intervals: list = field(default_factory=list)  # stage assignment per block


@dataclass
class PatternTable:
    base: int
    blocks: list  # B_{U,lambda}
    patterns: list  # per block: tuple of (i, j, t) over the window
    selected: list  # membership in Lambda'
    partition_ok: bool


def _interval_len(iv: Interval) -> int:
    return 0 if iv is None else iv[1] - iv[0] + 1


def _shift(iv: Interval, s: int) -> Interval:
    return None if iv is None else (iv[0] + s, iv[1] + s)


def _negate(iv: Interval) -> Interval:
    return None if iv is None else (-iv[1], -iv[0])


def _contains(iv: Interval, a: int) -> bool:
    return iv is not None and iv[0] <= a <= iv[1]


def _inside(iv: Interval, outer: tuple[int, int]) -> bool:
    return iv is None or (outer[0] <= iv[0] and iv[1] <= outer[1])


def _meets(iv: Interval, outer: tuple[int, int]) -> bool:
    return iv is not None and iv[0] <= outer[1] and outer[0] <= iv[1]


class CastleBuilder:
    """Holds the pattern tables and the interval assignment for one run."""

    def __init__(self, params: Parameters, inputs: PreparedInputs, *, trace: bool = False,
                 check_iii: bool = True, stage_order: Optional[Iterable[int]] = None):
        self.params = params
        self.inputs = inputs
        self.space = inputs.space
        self.ctx = params.ctx
        self.trace_on = trace
        self.trace: list = []
        self.check_iii = check_iii
        self.stats = {"cases": {}, "ii_exceptions": 0, "synchronizations": 0}
        castle = inputs.castle
        self.depth = castle.depth()
        self.P, self.Q = self.space.moduli(self.depth)
        d = self.ctx.d
        self.alpha_id = self.ctx.alpha == tuple(tuple(int(i == j) for j in range(d)) for i in range(d))
        # shapes and cores
        self.cores: list[frozenset] = []
        self.core_certs: list[TilingCertificate] = []
        self.core_arrays: list[np.ndarray] = []
        self.core_origin: list[np.ndarray] = []
        self.core_dims: list[tuple] = []
        shape_ids: dict = {}
        self.bases: list[BaseData] = []
        self.by_residue: dict = {}
        self.by_y: dict = {}
        for idx, tower in enumerate(castle.towers):
            S = _shape_h(self.ctx, tower.shape)
            if S not in shape_ids:
                B, cert = inputs.cores[S]
                shape_ids[S] = len(self.cores)
                self.cores.append(B)
                self.core_certs.append(cert)
                arr = np.array(sorted(B), dtype=np.int64).reshape(len(B), d)
                self.core_arrays.append(arr)
                lo = arr.min(axis=0)
                self.core_origin.append(lo)
                self.core_dims.append(tuple(int(v) for v in arr.max(axis=0) - lo + 1))
            U = tower.base.refine(self.depth)
            if len(U.keys) != 1:
                raise ConstructionError("input", f"base {idx} is not a single cylinder at depth {self.depth}")
            X, Y = self.space.decode(self.depth, U.keys)
            c, y = tuple(int(v) for v in X[0]), int(Y[0])
            if (c, y) in self.by_residue:
                raise ConstructionError("input", f"two towers share the base residue {(c, y)}")
            base = BaseData(idx, U, c, y, shape_ids[S])
            self.bases.append(base)
            self.by_residue[(c, y)] = idx
            self.by_y.setdefault(y, []).append((c, base.shape_id, idx))
        # per g-residue: geometric signature and the matching tower indices
        self.ysig: dict = {}
        self.yj: dict = {}
        for y, lst in self.by_y.items():
            lst.sort()
            self.ysig[y] = tuple((c, s) for c, s, _ in lst)
            self.yj[y] = tuple(j for _, _, j in lst)
        self._twisted: dict = {}
        self._geom: dict = {}
        self._intern: dict = {}
        self._refine: dict = {}
        self._inv_cache: dict = {}
        # processing order: castle order unless a permutation of tower indices is given
        order = list(range(len(self.bases))) if stage_order is None else [int(k) for k in stage_order]
        if sorted(order) != list(range(len(self.bases))):
            raise ValueError("stage_order must be a permutation of the tower indices")
        self.stage_of = {k: pos for pos, k in enumerate(order)}

    # -- geometry

    def alpha_vec(self, i: int, v) -> tuple:
        if self.alpha_id or i == 0:
            return tuple(v)
        return mat_vec(self.ctx.alpha_power(i), tuple(v))

    def twisted_core(self, sid: int, i: int) -> frozenset:
        key = (sid, 0 if self.alpha_id else i)
        out = self._twisted.get(key)
        if out is None:
            out = frozenset(self.alpha_vec(i, b) for b in self.cores[sid])
            self._twisted[key] = out
        return out

    def _intern_fs(self, fs: frozenset) -> frozenset:
        return self._intern.setdefault(fs, fs)

    def cellpart(self, sk: int, ck: tuple, sig: tuple, i: int) -> tuple:
        """Cells B_k n (alpha^{-i}(B_j) + t) over the towers of a g-residue.

        Returns a tuple of (cell, position in the signature, t); cached on
        the geometry, which does not depend on y.
        """
        key = (sk, ck, sig, 0 if self.alpha_id else i)
        hit = self._geom.get(key)
        if hit is not None:
            return hit
        P = self.P
        Bk = self.cores[sk]
        arr_k = self.core_arrays[sk]
        out = []
        for pos, (cj, sj) in enumerate(sig):
            tw = self.twisted_core(sj, -i)
            tau = [(a - b) % P for a, b in zip(self.alpha_vec(-i, cj), ck)]
            tw_arr = np.array(sorted(tw), dtype=np.int64).reshape(len(tw), -1)
            lo = arr_k.min(axis=0) - tw_arr.max(axis=0)
            hi = arr_k.max(axis=0) - tw_arr.min(axis=0)
            ranges = []
            for c in range(len(ck)):
                start = int(lo[c]) + ((tau[c] - int(lo[c])) % P)
                ranges.append(range(start, int(hi[c]) + 1, P))
            for t in itertools.product(*ranges):
                cell = frozenset(tuple(v + s for v, s in zip(b, t)) for b in tw) & Bk
                if cell:
                    out.append((self._intern_fs(cell), pos, tuple(t)))
        hit = tuple(out)
        seen: set = set()
        for cell, _, _ in hit:
            if seen & cell:
                raise ConstructionError("castle", "two translates alpha^{-i}(B_j)t overlap inside B_k",
                                        {"i": i, "shape": sk, "residue": ck})
            seen |= cell
        self._geom[key] = hit
        return hit

    def cells(self, k: int, i: int) -> list:
        """(cell, j, t) with cell = B_k n alpha^{-i}(B_j) t nonempty and g^i t x in V_j."""
        base = self.bases[k]
        yy = (base.y + i) % self.Q
        sig = self.ysig.get(yy)
        if not sig:
            return []
        js = self.yj[yy]
        return [(cell, js[pos], t) for cell, pos, t in self.cellpart(base.shape_id, base.c, sig, i)]

    def compute_T_sets(self, k: int, window: Optional[int] = None) -> dict:
        """T_{x,i,j} for |i| <= 4r (or the given radius), keyed by (i, j)."""
        R = 4 * self.params.r if window is None else window
        out: dict = {}
        for i in range(-R, R + 1):
            for _, j, t in self.cells(k, i):
                out.setdefault((i, j), set()).add(t)
        return {key: frozenset(v) for key, v in out.items()}

    # -- pattern blocks

    def _refine_state(self, state: tuple, part: tuple) -> tuple:
        key = (id(state), id(part))
        hit = self._refine.get(key)
        if hit is not None:
            return hit
        cells = [c for c, _, _ in part]
        covered = frozenset().union(*cells) if cells else frozenset()
        new = []
        for blk in state:
            for c in cells:
                x = blk & c
                if x:
                    new.append(x)
            rest = blk - covered
            if rest:
                new.append(rest)
        new_state = tuple(sorted((self._intern_fs(b) for b in new), key=lambda b: min(b)))
        new_state = self._intern.setdefault(("state", new_state), new_state)
        self._refine[key] = new_state
        return new_state

    def compute_blocks(self, k: int) -> list:
        base = self.bases[k]
        R = 4 * self.params.r
        B = self.cores[base.shape_id]
        state = self._intern.setdefault(("state", (B,)), (B,))
        parts = {}
        sk, ck = base.shape_id, base.c
        for i in range(-R, R + 1):
            sig = self.ysig.get((base.y + i) % self.Q)
            if sig:
                p = self.cellpart(sk, ck, sig, i)
                parts[id(p)] = p
        for p in parts.values():
            state = self._refine_state(state, p)
        return list(state)

    def pattern_of(self, k: int, b: tuple, lo: int, hi: int) -> tuple:
        out = []
        for i in range(lo, hi + 1):
            for cell, j, t in self.cells(k, i):
                if b in cell:
                    out.append((i, j, t))
                    break
        return tuple(out)

    def build_tables(self) -> None:
        for base in self.bases:
            blocks = self.compute_blocks(base.idx)
            base.blocks = blocks
            sid = base.shape_id
            if len(blocks) > 1:
                lk = np.full(self.core_dims[sid], -1, dtype=np.int32)
                org = self.core_origin[sid]
                for n, blk in enumerate(blocks):
                    arr = np.array(sorted(blk), dtype=np.int64).reshape(len(blk), -1) - org
                    lk[tuple(arr.T)] = n
                base.lookup = lk
            base.invariant = [self._block_invariant(blk) for blk in blocks]
            base.intervals = [None] * len(blocks)

    def _block_invariant(self, blk: frozenset) -> bool:
        hit = self._inv_cache.get(blk)
        if hit is None:
            hit = check_invariance(self.ctx.H, self.params.K1, self.params.delta, blk)[0]
            self._inv_cache[blk] = hit
        return hit

    def pattern_table(self, k: int, window: Optional[int] = None) -> PatternTable:
        base = self.bases[k]
        R = 4 * self.params.r if window is None else window
        pats = [self.pattern_of(k, min(blk), -R, R) for blk in base.blocks]
        B = self.cores[base.shape_id]
        union = frozenset().union(*base.blocks)
        ok = union == B and sum(len(b) for b in base.blocks) == len(B)
        ok = ok and all(any(i == 0 and j == k for i, j, _ in p) for p in pats)
        return PatternTable(k, list(base.blocks), pats, list(base.invariant), ok)

    def neighbour_blocks(self, j: int, i: int, t: tuple, arr: np.ndarray) -> np.ndarray:
        """Block ids in base j of alpha^i(b - t) for the rows b of ``arr``."""
        nb = self.bases[j]
        if nb.lookup is None:
            return np.zeros(len(arr), dtype=np.int64)
        pts = arr - np.array(t, dtype=np.int64)
        if not self.alpha_id and i:
            M = np.array(self.ctx.alpha_power(i), dtype=np.int64)
            pts = pts @ M.T
        pts = pts - self.core_origin[nb.shape_id]
        dims = np.array(self.core_dims[nb.shape_id])
        if (pts < 0).any() or (pts >= dims).any():
            raise ConstructionError("pattern", "neighbour element outside its core", {"j": j, "i": i})
        out = nb.lookup[tuple(pts.T)].astype(np.int64)
        if (out < 0).any():
            raise ConstructionError("pattern", "neighbour element outside its core", {"j": j, "i": i})
        return out

    # -- interval recursion

    def _rect_keys(self, k: int, iv: Interval, blk: frozenset) -> np.ndarray:
        if iv is None or not blk:
            return np.zeros(0, dtype=np.int64)
        base = self.bases[k]
        if not self.alpha_id:
            return level_keys(Rectangle(self.ctx, iv[0], iv[1], blk), base.U)
        sp = self.space
        pts = np.array(sorted(blk), dtype=np.int64).reshape(len(blk), -1) + np.array(base.c)
        ys = np.zeros(len(pts), dtype=np.int64)
        hk = sp.encode(self.depth, pts, ys) // self.Q
        a = np.arange(iv[0], iv[1] + 1, dtype=np.int64)
        return (hk[:, None] * self.Q + (base.y + a[None, :]) % self.Q).reshape(-1)

    def _own(self, j: int, n: int, s: int) -> Interval:
        iv = self.bases[j].intervals[n]
        return iv if s == 1 else _negate(iv)

    def run(self) -> None:
        if not self.bases[0].blocks:
            self.build_tables()
        order = sorted(range(len(self.bases)), key=lambda k: self.stage_of[k])
        if self.check_iii:
            self.cover = np.zeros(self.space.size(self.depth), dtype=np.int32)
            self.target = np.zeros_like(self.cover)
        for k in order:
            self.stage(k)

    def stage(self, k: int) -> None:
        base = self.bases[k]
        r = self.params.r
        groups: dict = {}
        for n, blk in enumerate(base.blocks):
            groups.setdefault(self.pattern_of(k, min(blk), -2 * r, 2 * r), []).append(n)
        updates: dict = {}
        for pat, members in groups.items():
            A_theta, local, info = self.assign_theta(k, pat, members)
            for n in members:
                base.intervals[n] = A_theta
            for key, iv in local.items():
                if key in updates and updates[key] != iv:
                    raise ConstructionError("ambiguity", "an interval was redefined differently",
                                            {"stage": k, "neighbour": key, "old": updates[key], "new": iv})
                updates[key] = iv
            case = info["case"]
            self.stats["cases"][case] = self.stats["cases"].get(case, 0) + 1
            if self.trace_on:
                self.trace.append({"stage": self.stage_of[k], "tower": k, "blocks": members,
                                   "A_theta": A_theta, "updates": {f"{a}:{b}": v for (a, b), v in local.items()},
                                   **info})
        old = {}
        for (j, n), iv in updates.items():
            old[(j, n)] = self.bases[j].intervals[n]
            self.bases[j].intervals[n] = iv
        for (j, n) in updates:
            self._check_interval((j, n), self.bases[j].intervals[n])
        for n, iv in enumerate(base.intervals):
            self._check_interval((k, n), iv)
        if self.check_iii:
            A = self.params.A
            B = self.cores[base.shape_id]
            self.target[self._rect_keys(k, A, B)] = 1
            for n, blk in enumerate(base.blocks):
                np.add.at(self.cover, self._rect_keys(k, base.intervals[n], blk), 1)
            for (j, n), prev in old.items():
                blk = self.bases[j].blocks[n]
                np.add.at(self.cover, self._rect_keys(j, prev, blk), -1)
                np.add.at(self.cover, self._rect_keys(j, self.bases[j].intervals[n], blk), 1)
            if not np.array_equal(self.cover, self.target):
                bad = np.flatnonzero(self.cover != self.target)
                raise ConstructionError("iii", "assigned rectangles do not tile the union of A B_j V_j",
                                        {"stage": k, "mismatches": int(len(bad)),
                                         "first": int(bad[0]), "cover": int(self.cover[bad[0]]),
                                         "target": int(self.target[bad[0]])})

    def _check_interval(self, key: tuple, iv: Interval) -> None:
        if iv is None:
            return
        if _interval_len(iv) < self.params.floor_dr:
            raise ConstructionError("i", "nonempty interval shorter than floor(delta r)",
                                    {"block": key, "interval": iv})
        if not _inside(iv, self.params.A_plus):
            raise ConstructionError("ii", "interval leaves A+", {"block": key, "interval": iv})
        if not _meets(iv, self.params.A):
            self.stats["ii_exceptions"] += 1

    def assign_theta(self, k: int, pat: tuple, members: list) -> tuple:
        r = self.params.r
        dr = self.params.delta * r
        A = self.params.A
        pos = self.stage_of[k]
        entries = [(i, j, t) for i, j, t in pat if self.stage_of[j] < pos]
        if not entries:
            return A, {}, {"case": "fresh"}
        Ap = a_prime([i for i, _, _ in entries], r)
        if Ap is None:
            return None, {}, {"case": "covered"}
        p, q = Ap
        info = {"p": p, "q": q}
        if q - p >= dr:
            return Ap, {}, {"case": "1", **info}
        if p > -dr:
            A_theta, local, sub = self._one_side(k, members, entries, p, q, 1)
            return A_theta, local, {"case": "2" + sub, **info}
        if not q < dr:
            raise ConstructionError("cases", "A' fits none of the three cases", info)
        A_theta, local, sub = self._one_side(k, members, entries, -q, -p, -1)
        return _negate(A_theta), local, {"case": "3" + sub, **info}

    def _one_side(self, k: int, members: list, entries: list, p: int, q: int, s: int) -> tuple:
        """Donation, appropriation or synchronization on the left of A' = [p, q],
        in view coordinates (s = -1 reflects the exponent axis)."""
        base = self.bases[k]
        prm = self.params
        dr = prm.delta * prm.r
        fl = prm.floor_dr
        arr = np.array(sorted(itertools.chain.from_iterable(base.blocks[n] for n in members)),
                       dtype=np.int64).reshape(-1, self.ctx.d)
        ents = sorted(((s * i, j, t, i) for i, j, t in entries), key=lambda e: e[0])
        left = [e for e in ents if e[0] < p]
        nbs = [self.neighbour_blocks(j, i, t, arr) for _, j, t, i in left]
        # x-view interval of every left neighbour of every b
        lo = np.empty((len(left), len(arr)), dtype=np.int64)
        hi = np.empty_like(lo)
        for w, (vi, j, _, _) in enumerate(left):
            own = [self._own(j, n, s) for n in range(len(self.bases[j].blocks))]
            olo = np.array([o[0] if o else _EMPTY_LO for o in own], dtype=np.int64)
            ohi = np.array([o[1] if o else _EMPTY_HI for o in own], dtype=np.int64)
            lo[w] = olo[nbs[w]] + vi
            hi[w] = ohi[nbs[w]] + vi
        hit = (lo <= p - 1) & (p - 1 <= hi)
        if (hit.sum(axis=0) != 1).any():
            raise ConstructionError("adjacency", "no unique interval adjacent to A' on the left",
                                    {"tower": k, "p": p, "q": q, "view": s})
        w_of = hit.argmax(axis=0)
        if (hi[w_of, np.arange(len(arr))] != p - 1).any():
            raise ConstructionError("adjacency", "adjacent interval overlaps A'", {"tower": k})
        adj = {}
        for col in range(len(arr)):
            w = int(w_of[col])
            adj[(w, int(nbs[w][col]))] = (int(lo[w, col]), int(hi[w, col]))
        lens = {key: b - a + 1 for key, (a, b) in adj.items()}
        short = {key for key, L in lens.items() if L < 2 * dr}
        local: dict = {}
        if len(short) == len(adj):
            return None, self._donate(left, adj, q, s, local), "a"
        if not short:
            return self._appropriate(left, adj, p, q, s, local), local, "b"
        return self._synchronize(k, left, nbs, lo, hi, p, q, s, local)

    def _put(self, local: dict, key: tuple, view_iv: Interval, s: int) -> None:
        local[key] = view_iv if s == 1 else _negate(view_iv)

    def _donate(self, left, adj, q, s, local) -> dict:
        for (w, n), (a, _) in adj.items():
            vi, j = left[w][0], left[w][1]
            self._put(local, (j, n), (a - vi, q - vi), s)
        return local

    def _appropriate(self, left, adj, p, q, s, local) -> Interval:
        fl = self.params.floor_dr
        for (w, n), (a, _) in adj.items():
            vi, j = left[w][0], left[w][1]
            self._put(local, (j, n), (a - vi, p - fl - 1 - vi), s)
        return (p - fl, q)

    def _synchronize(self, k, left, nbs, lo, hi, p, q, s, local) -> tuple:
        prm = self.params
        if not prm.delta < Fraction(1, 32):
            raise ConstructionError("synchronization", "synchronization needs delta < 1/32",
                                    {"tower": k, "delta": str(prm.delta)})
        self.stats["synchronizations"] += 1
        stages = [self.stage_of[e[1]] for e in left]
        pi = successive_minima(stages)
        gammas, cols = {}, {}
        for col in range(lo.shape[1]):
            sig = tuple(int(nbs[w][col]) for w in pi)
            if sig not in gammas:
                cols[sig] = col
                gammas[sig] = [None if lo[w, col] > hi[w, col] else (int(lo[w, col]), int(hi[w, col]))
                               for w in pi]
        span = (left[0][0] + prm.r + math.floor(3 * prm.delta * prm.r) + 1, p - 1)
        try:
            new, A_theta, sub = left_synchronize(gammas, span, p, q, prm.r, prm.delta)
        except ConstructionError as err:
            err.diagnostics.update({"tower": k, "view": s})
            raise
        for sig, ivs in new.items():
            for kp, iv in enumerate(ivs):
                if iv != gammas[sig][kp]:
                    vi, j = left[pi[kp]][0], left[pi[kp]][1]
                    self._put(local, (j, sig[kp]), _shift(iv, -vi), s)
        return A_theta, local, sub


def a_prime(offsets, r: int) -> Interval:
    """A minus the union of the translates A g^i over the given offsets."""
    spans = sorted((i - r, i + r) for i in offsets)
    gaps, cur = [], -r
    for lo, hi in spans:
        if lo > cur and cur <= r:
            gaps.append((cur, min(lo - 1, r)))
        cur = max(cur, hi + 1)
    if cur <= r:
        gaps.append((cur, r))
    if len(gaps) > 1:
        raise ConstructionError("a-prime", "A' is not an interval", {"gaps": gaps})
    return gaps[0] if gaps else None


def successive_minima(stages: list) -> list:
    """pi(1) minimises the stage over all positions, pi(k) over those after pi(k-1)."""
    pi, start = [], 0
    while start < len(stages):
        m = min(range(start, len(stages)), key=lambda v: stages[v])
        pi.append(m)
        start = m + 1
    return pi


def left_synchronize(gammas: dict, span: tuple, p: int, q: int, r: int, delta) -> tuple:
    """Uniformise the intervals left of A' = [p, q] across neighbour signatures.

    ``gammas`` maps a signature to its intervals (absolute exponents, None
    when empty) indexed by kappa along pi.  Returns the new intervals per
    signature, the interval for the current patch and the subcase that the
    synchronised tail falls into ("c/a" donation, "c/b" appropriation).
    """
    delta = Fraction(delta)
    dr = delta * r
    fl = math.floor(dr)
    A = (-r, r)
    anchor = math.floor(Fraction(-r, 4))
    chosen = {}
    for sig, ivs in gammas.items():
        D = [iv for iv in ivs[1:] if iv is not None]
        covered = set()
        for a, b in D:
            covered.update(range(max(a, span[0]), min(b, span[1]) + 1))
        ok = (len(covered) == max(0, span[1] - span[0] + 1)
              and all(_meets(iv, span) for iv in D)
              and all(_interval_len(iv) <= 2 * dr for iv in D)
              and bool(D) and _meets(max(D), A))
        if not ok:
            raise ConstructionError("bullet", "the intervals left of A' are not in synchronizable position",
                                    {"signature": sig, "intervals": D, "span": span})
        k1 = [kp for kp, iv in enumerate(ivs) if _contains(iv, anchor)]
        if len(k1) != 1:
            raise ConstructionError("bullet", "anchor not covered exactly once", {"signature": sig})
        chosen[sig] = (k1[0], ivs[k1[0]][0])
    g0 = min(chosen, key=lambda sg: (-chosen[sg][0], chosen[sg][1], sg))
    k1, i_left = chosen[g0]
    ref = gammas[g0]
    N = ref[k1][1]
    out, tails = {}, set()
    for sig, ivs in gammas.items():
        new = list(ivs)
        k0s = [kp for kp, iv in enumerate(ivs) if _contains(iv, i_left)]
        if len(k0s) != 1 or k0s[0] > k1:
            raise ConstructionError("synchronization", "no admissible kappa_0", {"signature": sig})
        k0 = k0s[0]
        M = ivs[k0][0]
        if N - M + 1 <= 2 * dr:
            new[k1] = (M, N)
            for kp in range(k0, k1):
                new[kp] = None
        else:
            if k0 >= k1:
                raise ConstructionError("synchronization", "split needs kappa_0 < kappa_1", {"signature": sig})
            own0, own1 = ivs[k0], ref[k1]
            cut = next((c for c in range(M + 1, N)
                        if fl <= c - M + 1 <= 2 * dr and fl <= N - c <= 2 * dr
                        and c <= own0[1] and c + 1 >= own1[0]), None)
            if cut is None:
                raise ConstructionError("synchronization", "no split point", {"A0": (M, N)})
            new[k0] = (M, cut)
            new[k1] = (cut + 1, N)
            for kp in range(k0 + 1, k1):
                new[kp] = None
        for kp in range(k1 + 1, len(ivs)):
            new[kp] = ref[kp]
        last = max((kp for kp, iv in enumerate(new) if iv is not None), default=None)
        tails.add(None if last is None else (last, new[last]))
        out[sig] = new
    if len(tails) != 1 or None in tails:
        raise ConstructionError("synchronization", "tails did not synchronize", {"tails": sorted(map(str, tails))})
    (w2, tail), = tails
    if tail[1] != p - 1:
        raise ConstructionError("synchronization", "synchronized tail not adjacent to A'", {"tail": tail})
    if _interval_len(tail) < 2 * dr:
        for new in out.values():
            new[w2] = (tail[0], q)
        return out, None, "c/a"
    for new in out.values():
        new[w2] = (tail[0], p - fl - 1)
    return out, (p - fl, q), "c/b"


# ---- public operations ------------------------------------------------------

def compute_T_sets(builder: CastleBuilder, k: int, window: Optional[int] = None) -> dict:
    return builder.compute_T_sets(k, window)


def compute_patterns(builder: CastleBuilder, k: int, window: Optional[int] = None) -> PatternTable:
    if not builder.bases[k].blocks:
        builder.build_tables()
    table = builder.pattern_table(k, window)
    if not table.partition_ok:
        raise ConstructionError("pattern", "pattern blocks do not partition the core", {"tower": k})
    return table


def _twisted_cert(ctx: GroupContext, cert: TilingCertificate, i: int, t: tuple) -> TilingCertificate:
    """Certificate for alpha^{-i}(B) + t from one for B."""
    m = ctx.alpha_power(-i)
    pairs = tuple((frozenset(mat_vec(m, f) for f in tile),
                   tuple(a + b for a, b in zip(mat_vec(m, c), t))) for tile, c in cert.pairs)
    return TilingCertificate(pairs)


def disjointifier_rows(builder: CastleBuilder, k: int) -> list:
    """Rows i = -4r..4r of translates alpha^{-i}(B_j)t, t in T_{x,i,j}, with certificates."""
    ctx = builder.ctx
    H = ctx.H
    R = 4 * builder.params.r
    rows = []
    for i in range(-R, R + 1):
        row = []
        for _, j, t in builder.cells(k, i):
            sid = builder.bases[j].shape_id
            B = frozenset(H.compose(b, t) for b in builder.twisted_core(sid, -i))
            row.append((B, _twisted_cert(ctx, builder.core_certs[sid], i, t)))
        rows.append(row)
    return rows


def select_invariant_patterns(builder: CastleBuilder, k: int, *, cross_check: bool = False) -> dict:
    """Lambda' for one base: blocks that are (K', delta)-invariant.

    With ``cross_check`` the disjointifier is run over the 8r+1 rows with
    delta -> beta and K -> K'; its pieces must coincide with the blocks, and
    the (1 - beta) mass bound for its unflagged pieces is reported (asserted
    when the lemma's hypotheses hold).
    """
    base = builder.bases[k]
    B = builder.cores[base.shape_id]
    sel = [n for n, ok in enumerate(base.invariant) if ok]
    mass = sum(len(base.blocks[n]) for n in sel)
    out = {"tower": k, "selected": sel, "blocks": len(base.blocks),
           "selected_fraction": Fraction(mass, len(B)),
           "e_prime": Fraction(mass, len(B)) >= 1 - builder.params.beta}
    if cross_check:
        prm = builder.params
        inst = DisjointificationInstance(builder.ctx.H, B, disjointifier_rows(builder, k), prm.K1, prm.beta)
        part = disjointify(inst, enforce=False)
        if sorted(map(sorted, part.pieces.values())) != sorted(map(sorted, base.blocks)):
            raise ConstructionError("pattern", "disjointifier pieces differ from the pattern blocks", {"tower": k})
        kept = sum(len(P) for w, P in part.pieces.items() if not part.flags[w])
        hyp_ok = builder.inputs.report["collection"]["hypotheses_met"]
        holds = Fraction(kept, len(B)) >= 1 - prm.beta
        out["disjointifier"] = {"pieces": len(part.pieces), "unflagged_fraction": Fraction(kept, len(B)),
                                "e_prime": holds, "hypotheses_met": hyp_ok}
        if hyp_ok and not holds:
            raise ConstructionError("e-prime", "selected mass below (1 - beta)|B_k|", out)
    return out


def shape_invariance(ctx: GroupContext, K: frozenset, iv: tuple, blk: frozenset) -> Fraction:
    """|d_K(A B)| / |A B| for the rectangle g^A B, K inside H.

    k g^a b = g^a alpha^{-a}(k) b, so the boundary is the disjoint union over
    a of g^a d_{alpha^{-a}K}(B).
    """
    H = ctx.H
    lo, hi = iv
    total = 0
    if ctx.alpha == tuple(tuple(int(i == j) for j in range(ctx.d)) for i in range(ctx.d)):
        total = (hi - lo + 1) * len(k_boundary(H, K, blk))
    else:
        for a in range(lo, hi + 1):
            Ka = frozenset(ctx.apply_alpha(-a, kk) for kk in K)
            total += len(k_boundary(H, Ka, blk))
    return Fraction(total, (hi - lo + 1) * len(blk))


def assemble_castle(builder: CastleBuilder) -> tuple[Castle, dict]:
    prm = builder.params
    gK = convention_k(prm.ctx, prm.convention)
    towers, ratios, worst_g = [], [], Fraction(0)
    for base in builder.bases:
        for n, blk in enumerate(base.blocks):
            iv = base.intervals[n]
            if not base.invariant[n] or iv is None:
                continue
            ratio = shape_invariance(prm.ctx, prm.K, iv, blk)
            if ratio > prm.delta:
                raise ConstructionError("assemble", "shape is not (K, delta)-invariant",
                                        {"tower": base.idx, "block": n, "interval": iv, "ratio": str(ratio)})
            g_ok, g_ratio = check_invariance(prm.ctx, gK, prm.delta, g_interval(prm.ctx, iv[0], iv[1]))
            if not g_ok:
                raise ConstructionError("assemble", "g-interval fails the invariance convention",
                                        {"tower": base.idx, "interval": iv})
            ratios.append(ratio)
            worst_g = max(worst_g, g_ratio)
            towers.append(Tower(Rectangle(prm.ctx, iv[0], iv[1], blk), base.U))
    castle = Castle(tuple(towers))
    if not check_castle(castle):
        raise ConstructionError("assemble", "output towers overlap")
    return castle, {"towers": len(towers), "max_shape_ratio": max(ratios, default=Fraction(0)),
                    "max_g_ratio": worst_g,
                    "min_interval": min((t.shape.hi - t.shape.lo + 1 for t in towers), default=0)}


def verify_output(builder: CastleBuilder, castle: Castle) -> dict:
    prm = builder.params
    eps = prm.epsilon
    sp = builder.space
    depth = builder.depth
    if castle.towers:
        lower, upper = h_density_bounds(castle_footprint(castle))
    else:
        lower = upper = Fraction(0)
    # W0: bases times the discarded blocks
    w0 = 0
    for base in builder.bases:
        w0 += sum(len(b) for n, b in enumerate(base.blocks) if not base.invariant[n])
    mu_w0 = Fraction(w0, sp.size(depth))
    return {"footprint_lower_density": lower, "footprint_upper_density": upper,
            "density_target": 1 - 3 * eps, "density_ok": lower >= 1 - 3 * eps,
            "mu_W0": mu_w0, "mu_W0_le_beta": mu_w0 <= prm.beta,
            "mu_A_plus_W0_bound": (4 * prm.r + 1) * mu_w0,
            "saturation_le_epsilon": (4 * prm.r + 1) * mu_w0 <= eps}


@dataclass
class BuildResult:
    params: Parameters
    castle: Castle
    builder: CastleBuilder
    report: dict


def build_castle(params: Parameters, space: OdometerSpace, *, h_depth: Optional[int] = None,
                 max_depth: int = 12, stagger: bool = False, order_seed: Optional[int] = None,
                 trace: bool = False, check_iii: bool = True, cross_check: int = 0,
                 stage_order: Optional[Iterable[int]] = None) -> BuildResult:
    """Run the whole construction; ``cross_check`` runs the disjointifier on
    that many bases (the first ones in castle order)."""
    inputs = prepare_inputs(params, space, h_depth=h_depth, max_depth=max_depth,
                            stagger=stagger, order_seed=order_seed)
    builder = CastleBuilder(params, inputs, trace=trace, check_iii=check_iii, stage_order=stage_order)
    builder.build_tables()
    tables = [compute_patterns(builder, k, window=0) for k in range(len(builder.bases))]
    selection = [select_invariant_patterns(builder, k, cross_check=k < cross_check)
                 for k in range(len(builder.bases))]
    builder.run()
    castle, asm = assemble_castle(builder)
    out = verify_output(builder, castle)
    report = {
        "inputs": inputs.report,
        "patterns": {"realized": sum(len(b.blocks) for b in builder.bases),
                     "partition_ok": all(t.partition_ok for t in tables),
                     "selected": sum(len(s["selected"]) for s in selection),
                     "e_prime_all": all(s["e_prime"] for s in selection),
                     "cross_checks": [s["disjointifier"] for s in selection if "disjointifier" in s]},
        "recursion": builder.stats,
        "castle": asm,
        "output": out,
    }
    return BuildResult(params, castle, builder, report)


def spot_check_iii(builder: CastleBuilder, n_points: int = 100, seed: int = 0) -> dict:
    """Pointwise condition (iii) at random points z.

    The window {(g^a b)^{-1}} = {(-b, -a)} with a in A+ and b in the union of
    the cores locates every base point x with z = g^a b x.  z lies in the
    union of the A B_j V_j iff some hit has a in A and b in B_j, and the final
    assignment must then account for z exactly once (and never otherwise).
    """
    import random

    prm = builder.params
    depth = builder.depth
    sp = builder.space
    towers = [Tower(frozenset(), b.U) for b in builder.bases]
    owner = owner_array(Castle(tuple(towers)), depth)
    Bunion = np.array(sorted(frozenset().union(*builder.cores)), dtype=np.int64).reshape(-1, builder.ctx.d)
    lo, hi = prm.A_plus
    a_vals = np.repeat(np.arange(lo, hi + 1, dtype=np.int64), len(Bunion))
    b_vals = np.tile(Bunion, (hi - lo + 1, 1))
    rng = random.Random(seed)
    P, Q = builder.P, builder.Q
    mismatches, in_union = [], 0
    for _ in range(n_points):
        z = sp.point(depth, tuple(rng.randrange(P) for _ in range(builder.ctx.d)), rng.randrange(Q))
        js = locate_patch_array(z, -b_vals, -a_vals, owner, depth)
        union_hits, assigned = 0, 0
        for j in np.unique(js[js >= 0]):
            base = builder.bases[int(j)]
            sel = np.flatnonzero(js == j)
            sid = base.shape_id
            pts = b_vals[sel] - builder.core_origin[sid]
            dims = np.array(builder.core_dims[sid])
            inside = ((pts >= 0) & (pts < dims)).all(axis=1)
            sel, pts = sel[inside], pts[inside]
            if base.lookup is not None:
                blk = base.lookup[tuple(pts.T)].astype(np.int64)
            else:
                member = np.zeros(builder.core_dims[sid], dtype=bool)
                member[tuple((builder.core_arrays[sid] - builder.core_origin[sid]).T)] = True
                blk = np.where(member[tuple(pts.T)], 0, -1)
            sel, blk = sel[blk >= 0], blk[blk >= 0]
            a = a_vals[sel]
            union_hits += int(((prm.A[0] <= a) & (a <= prm.A[1])).sum())
            ivs = base.intervals
            ilo = np.array([iv[0] if iv else _EMPTY_LO for iv in ivs], dtype=np.int64)[blk]
            ihi = np.array([iv[1] if iv else _EMPTY_HI for iv in ivs], dtype=np.int64)[blk]
            assigned += int(((ilo <= a) & (a <= ihi)).sum())
        in_union += union_hits > 0
        if assigned != int(union_hits > 0):
            mismatches.append({"point": (z.x, z.y), "union_hits": union_hits, "assigned": assigned})
    return {"points": n_points, "in_union": in_union, "mismatches": mismatches, "ok": not mismatches}
