import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from castlekit.clopen import Castle, ClopenSet, OdometerSpace, Tower
from castlekit.comparison import (CertificateError, Piece, ShrinkPrecondition, SubequivalenceCertificate,
                                  check_subequivalence, even_subgroup_instance,
                                  finite_extension_combinator, random_coset_castle, shrink_shapes)
from castlekit.group_core import GroupContext

Z = GroupContext.zd(1)
ODO = OdometerSpace(Z, 2)
ZZ = GroupContext.semidirect([[1]])
ZZ_SPACE = OdometerSpace(ZZ, 2, 2)
K21 = frozenset(((h,), 0) for h in range(-10, 11))


def residues(depth, *rs):
    return ClopenSet(ODO, (depth, 0), np.array(rs, dtype=np.int64))


def test_checker_basics():
    C, B = residues(3, 1), residues(3, 1, 2)
    assert check_subequivalence(SubequivalenceCertificate(C, (Piece(C, (0,)),), B))
    # two pieces landing on the same residue in one class
    C2 = residues(3, 1, 2)
    clash = SubequivalenceCertificate(C2, (Piece(residues(3, 1), (1,)), Piece(residues(3, 2), (0,))), B)
    ok, problems = check_subequivalence(clash, report=True)
    assert not ok and any("overlap" in p for p in problems)
    # same pieces in different classes are fine
    split = SubequivalenceCertificate(C2, (Piece(residues(3, 1), (1,), 0), Piece(residues(3, 2), (0,), 1)), B)
    assert check_subequivalence(split)
    escape = SubequivalenceCertificate(C, (Piece(C, (5,)),), B)
    assert not check_subequivalence(escape)
    uncovered = SubequivalenceCertificate(C2, (Piece(C, (0,)),), B)
    assert any("cover" in p for p in check_subequivalence(uncovered, report=True)[1])


def test_combinator_even_subgroup():
    covers, certs, reps, B = even_subgroup_instance()
    out = finite_extension_combinator(covers, certs, reps, B)
    n = len(reps)
    assert out.n_classes == n * (n + 1) == 6
    assert check_subequivalence(out)
    assert set(out.classes) <= set(range(6))
    # the straddling cover is split between the two cosets
    assert {p.cls for p in out.pieces if p.cls // n == 2} == {4, 5}


def test_combinator_trivial_extension_relabels():
    covers, certs, _, B = even_subgroup_instance()
    target = certs[0].target
    out = finite_extension_combinator(covers[:2], [SubequivalenceCertificate(c.source, c.pieces, target)
                                                  for c in certs[:1]] + [certs[1]], [(0,)], target)
    assert out.n_classes == 2
    assert check_subequivalence(out)
    assert [p.s for p in out.pieces] == [(2,), (-2,)]


def test_combinator_rejects_bad_input():
    covers, certs, reps, B = even_subgroup_instance()
    bad = SubequivalenceCertificate(covers[0], (Piece(covers[0], (1,)),), certs[0].target)
    with pytest.raises(CertificateError):
        finite_extension_combinator(covers, [bad] + certs[1:], reps, B)
    with pytest.raises(CertificateError):
        finite_extension_combinator(covers, certs, [(1,), (0,)], B)


def test_shrink_ceiling_example():
    # one coset slice of 100 elements at delta = 1/20 keeps ceil(100/19) = 6
    shape = frozenset(((h,), 0) for h in range(1000))
    castle = Castle((Tower(shape, ZZ_SPACE.whole((0, 0))),))
    (Sp,) = shrink_shapes(castle, [((0,), 0)], K21, Fraction(1, 20))
    assert len(Sp) == math.ceil(Fraction(1, 19) * 1000)
    small = frozenset(((h,), 0) for h in range(100))
    castle = Castle((Tower(small, ZZ_SPACE.whole((0, 0))),))
    (Sp,) = shrink_shapes(castle, [((0,), 0)], K21, Fraction(1, 20), check_preconditions=False)
    assert len(Sp) == 6 and Sp == frozenset(((h,), 0) for h in range(6))


def test_shrink_preconditions():
    shape = frozenset(((h,), 0) for h in range(1000))
    castle = Castle((Tower(shape, ZZ_SPACE.whole((0, 0))),))
    with pytest.raises(ShrinkPrecondition):
        shrink_shapes(castle, [((0,), 0)], frozenset(list(K21)[:5]), Fraction(1, 20))
    with pytest.raises(ShrinkPrecondition):
        shrink_shapes(castle, [((0,), 0)], K21 - {((0,), 0)}, Fraction(1, 20))
    thin = Castle((Tower(frozenset(((h,), 0) for h in range(50)), ZZ_SPACE.whole((0, 0))),))
    with pytest.raises(ShrinkPrecondition):
        shrink_shapes(thin, [((0,), 0)], K21, Fraction(1, 20))


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6))
def test_shrink_random_castles(seed):
    delta = Fraction(1, 20)
    castle, reps = random_coset_castle(random.Random(seed), ZZ_SPACE, K21, delta)
    for tower, Sp in zip(castle.towers, shrink_shapes(castle, reps, K21, delta)):
        S = tower.shape
        assert Sp <= S
        assert len(Sp) <= 3 * delta * len(S)
        for i in {g[1] for g in S}:
            slice_size = sum(1 for g in S if g[1] == i)
            kept = sum(1 for g in Sp if g[1] == i)
            assert kept == math.ceil(delta / (1 - delta) * slice_size)
