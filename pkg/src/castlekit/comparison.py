"""Subequivalence certificates, the finite-extension combinator and coset
shape shrinking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .clopen import Castle, ClopenSet, Rectangle
from .group_core import GroupContext, check_invariance


class CertificateError(ValueError):
    pass


class ShrinkPrecondition(ValueError):
    pass


@dataclass(frozen=True)
class Piece:
    U: ClopenSet
    s: object  # group element; the piece is moved to s.U
    cls: int = 0


@dataclass(frozen=True)
class SubequivalenceCertificate:
    source: ClopenSet
    pieces: tuple
    target: ClopenSet
    n_classes: Optional[int] = None  # declared label count; labels lie in range(n_classes)

    @property
    def classes(self) -> list[int]:
        return sorted({p.cls for p in self.pieces})


def check_subequivalence(cert: SubequivalenceCertificate, *, report: bool = False):
    """Pieces cover the source; images sU lie in the target and are pairwise
    disjoint inside each class."""
    sp = cert.source.space
    problems = []
    if any(p.U.space != sp for p in cert.pieces) or cert.target.space != sp:
        problems.append("sets from different spaces")
    else:
        cover = sp.empty(cert.source.depth)
        for p in cert.pieces:
            cover = cover.union(p.U)
        if not cert.source.issubset(cover):
            problems.append("pieces do not cover the source")
        by_class: dict[int, list] = {}
        for idx, p in enumerate(cert.pieces):
            img = p.U.translate(p.s)
            if not img.issubset(cert.target):
                problems.append(f"image of piece {idx} leaves the target")
            by_class.setdefault(p.cls, []).append(img)
        for c, imgs in by_class.items():
            if not imgs:
                continue
            depth = (max(i.depth[0] for i in imgs), max(i.depth[1] for i in imgs))
            keys = [i.refine(depth).keys for i in imgs]
            total = sum(len(k) for k in keys)
            if len(np.unique(np.concatenate(keys))) != total:
                problems.append(f"images overlap in class {c}")
        if cert.n_classes is not None and any(not 0 <= p.cls < cert.n_classes for p in cert.pieces):
            problems.append("class label outside the declared range")
    ok = not problems
    return (ok, problems) if report else ok


def finite_extension_combinator(covers: Sequence[ClopenSet],
                                h_certs: Sequence[SubequivalenceCertificate],
                                coset_reps: Sequence, B: ClopenSet) -> SubequivalenceCertificate:
    """Combine H-certificates for the covers into one G-certificate into B.

    Each input piece (U', s) moves U' into U = sU' inside g_1 B u ... u g_n B.
    For each coset representative g_j the part of U' landing in g_j B is moved
    by g_j^{-1} s into B; classes are the pairs (i, j), numbered i*n + j.
    """
    if len(covers) != len(h_certs):
        raise CertificateError("one H-certificate per cover is required")
    sp = B.space
    ctx = sp.ctx
    n = len(coset_reps)
    if n == 0 or coset_reps[0] != ctx.identity():
        raise CertificateError("the first coset representative must be e")
    union_gB = sp.empty(B.depth)
    for g in coset_reps:
        union_gB = union_gB.union(B.translate(g))
    source = sp.empty(B.depth)
    for i, (A, cert) in enumerate(zip(covers, h_certs)):
        if not check_subequivalence(SubequivalenceCertificate(cert.source, cert.pieces, union_gB)):
            raise CertificateError(f"H-certificate {i + 1} fails its own check")
        if not A.issubset(cert.source):
            raise CertificateError(f"H-certificate {i + 1} does not cover its set")
        source = source.union(A)
    pieces = []
    for i, cert in enumerate(h_certs):
        for p in cert.pieces:
            for j, g in enumerate(coset_reps):
                gB = B.translate(g)
                # points x of U' with s.x in g_j B
                part = p.U.intersection(gB.translate(ctx.inverse(p.s)))
                if part.is_empty():
                    continue
                pieces.append(Piece(part, ctx.compose(ctx.inverse(g), p.s), i * n + j))
    out = SubequivalenceCertificate(source, tuple(pieces), B, n * len(h_certs))
    ok, problems = check_subequivalence(out, report=True)
    if not ok:
        raise CertificateError("combined certificate failed: " + "; ".join(problems))
    return out


def semidirect_coset(el) -> int:
    """Right coset of H containing h g^i, labelled by i."""
    return el[1]


def shrink_shapes(castle: Castle, coset_reps: Sequence, K_prime: Iterable, delta, *,
                  coset_of: Callable = semidirect_coset, ctx: Optional[GroupContext] = None,
                  check_preconditions: bool = True) -> list[frozenset]:
    """Per tower, keep the ceil(delta/(1-delta)|B_g|) smallest elements of
    each coset slice B_g g of the shape; the result has size at most
    3 delta |S|."""
    delta = Fraction(delta)
    K_prime = frozenset(K_prime)
    if not castle.towers:
        return []
    ctx = ctx or castle.towers[0].base.space.ctx
    if check_preconditions:
        if ctx.identity() not in K_prime:
            raise ShrinkPrecondition("K' must contain e")
        if not len(K_prime) > 1 / delta:
            raise ShrinkPrecondition("need |K'| > 1/delta")
    labels = {coset_of(g): g for g in coset_reps}
    out = []
    for idx, tower in enumerate(castle.towers):
        S = tower.shape.as_set() if isinstance(tower.shape, Rectangle) else frozenset(tower.shape)
        if check_preconditions and not check_invariance(ctx, K_prime, delta, S)[0]:
            raise ShrinkPrecondition(f"shape {idx} is not (K', delta)-invariant")
        slices: dict = {}
        for s in S:
            c = coset_of(s)
            if c not in labels:
                raise ShrinkPrecondition(f"no coset representative for {s}")
            slices.setdefault(c, []).append(s)
        kept = []
        for c, elems in slices.items():
            want = math.ceil(delta / (1 - delta) * len(elems))
            kept.extend(sorted(elems, key=ctx.sort_key)[:want])
        Sp = frozenset(kept)
        if not Sp <= S:
            raise AssertionError("shrunken shape escaped the original")
        if check_preconditions and len(Sp) > 3 * delta * len(S):
            raise AssertionError(f"|S'| = {len(Sp)} exceeds 3 delta |S| for shape {idx}")
        out.append(Sp)
    return out


# ---- reference inputs -------------------------------------------------------

def even_subgroup_instance():
    """Combinator inputs for H = 2Z inside G = Z on the 2-adic odometer.

    B is the residue class 0 mod 4 and the coset representatives are 0 and 1,
    so g_1 B u g_2 B is {0, 1} mod 4.  Three covers are moved there by
    single even translations; the third straddles both cosets.
    """
    from .clopen import OdometerSpace

    ctx = GroupContext.zd(1)
    sp = OdometerSpace(ctx, 2)
    depth = (2, 0)
    cls = lambda *rs: ClopenSet(sp, depth, np.array(rs, dtype=np.int64))
    B = cls(0)
    target = cls(0, 1)
    covers = [cls(2), cls(3), cls(0, 1)]
    shifts = [(2,), (-2,), (0,)]
    certs = [SubequivalenceCertificate(A, (Piece(A, s),), target) for A, s in zip(covers, shifts)]
    return covers, certs, [(0,), (1,)], B


def random_coset_castle(rng, space, K_prime: frozenset, delta, *, max_towers: int = 3,
                        max_cosets: int = 4, length_range=(300, 3000)) -> tuple[Castle, list]:
    """A castle over H x| Z whose shapes are unions of H-boxes on consecutive
    g-cosets and are (K', delta)-invariant; returns it with coset representatives."""
    from .clopen import Tower
    from .group_core import box

    ctx = space.ctx
    H = ctx.H
    towers, reps = [], set()
    for _ in range(rng.randint(1, max_towers)):
        while True:
            i0 = rng.randint(-5, 5)
            shape = set()
            for i in range(i0, i0 + rng.randint(1, max_cosets)):
                lo = [rng.randint(-50, 50) for _ in range(H.d)]
                side = [rng.randint(*length_range) if c == 0 else rng.randint(1, 3) for c in range(H.d)]
                shape.update((h, i) for h in box(H, lo, [a + s - 1 for a, s in zip(lo, side)]))
            shape = frozenset(shape)
            if check_invariance(ctx, K_prime, delta, shape)[0]:
                break
        reps.update(((0,) * H.d, i) for _, i in shape)
        towers.append(Tower(shape, space.whole((0, 0))))
    return Castle(tuple(towers)), sorted(reps, key=lambda g: g[1])
