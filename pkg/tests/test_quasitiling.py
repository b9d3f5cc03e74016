from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from castlekit.group_core import GroupContext, box
from castlekit.quasitiling import (ContractViolation, PreconditionError, QuasiTiling, TilingCertificate,
                                   TowerSequence, build_foelner_sequence, check_quasitiling,
                                   extract_tileable, min_levels, TilingCollection, quasitile, tiling_collection,
                                   verify_tiling)

Z = GroupContext.zd(1)
Z2 = GroupContext.zd(2)
QUARTER = Fraction(1, 4)


def brute_min_levels(eps):
    m = 1
    while not (1 - eps / 2) ** m < eps:
        m += 1
    return m


def test_min_levels():
    assert min_levels(QUARTER) == 11
    assert (Fraction(7, 8)) ** 11 < QUARTER <= Fraction(7, 8) ** 10
    for den in range(3, 40):
        eps = Fraction(1, den)
        assert min_levels(eps) == brute_min_levels(eps)
    with pytest.raises(ValueError):
        min_levels(Fraction(1, 2))


@pytest.mark.parametrize("ctx,sizes", [(Z, [1] * 9 + [3, 129]), (Z2, [1] * 9 + [9, 66049])])
def test_foelner_sequence(ctx, sizes):
    seq = build_foelner_sequence(QUARTER, ctx, nontrivial=2)
    assert [len(s) for s in seq.sets] == sizes
    assert seq.check() == []


def test_sequence_check_reports_problems():
    bad = TowerSequence(Z, (box(Z, 1, 3), box(Z, 0, 1)), QUARTER)
    errs = bad.check()
    assert any("contain e" in e for e in errs)
    assert any("not contained" in e for e in errs)
    assert any("(1-eps/2)^m" in e for e in errs)


def test_single_tile_exact_cover():
    seq = TowerSequence(Z, (box(Z, 0, 9),), QUARTER)
    qt = quasitile(box(Z, 0, 99), seq, check_precondition=False)
    assert sorted(c[0] for c, _ in qt.tiles[0]) == list(range(0, 100, 10))
    assert qt.covered() == box(Z, 0, 99)


def test_grid_exact_cover():
    seq = TowerSequence(Z2, (box(Z2, -1, 1),), QUARTER)
    E = box(Z2, 0, 29)
    qt = quasitile(E, seq, check_precondition=False)
    assert qt.covered() == E
    assert all(len(T) == 9 for _, T in qt.tiles[0])


def test_precondition_enforced():
    seq = build_foelner_sequence(QUARTER, Z, nontrivial=2)
    with pytest.raises(PreconditionError):
        quasitile(box(Z, 0, 2999), seq)


def test_large_interval():
    seq = build_foelner_sequence(QUARTER, Z, nontrivial=2)
    E = box(Z, 0, 9999)
    qt = quasitile(E, seq)
    assert check_quasitiling(E, qt) == []
    assert qt.covered() == E


def test_check_quasitiling_negatives():
    seq = TowerSequence(Z, (box(Z, 0, 9),), QUARTER)
    E = box(Z, 0, 19)
    overlap = QuasiTiling(seq, [[((0,), box(Z, 0, 9)), ((5,), box(Z, 0, 9))]])
    assert any("overlap" in e for e in check_quasitiling(E, overlap))
    shrunk = QuasiTiling(seq, [[((0,), box(Z, 0, 4))]])
    errs = check_quasitiling(E, shrunk)
    assert any("shrunk" in e for e in errs) and any("covers less" in e for e in errs)
    outside = QuasiTiling(seq, [[((15,), box(Z, 0, 9))]])
    assert any("leaves E" in e for e in check_quasitiling(E, outside))


def test_verify_tiling():
    cert = TilingCertificate(((box(Z, 0, 2), (0,)), (box(Z, 0, 1), (3,))))
    assert verify_tiling(Z, box(Z, 0, 4), cert)
    assert not verify_tiling(Z, box(Z, 0, 5), cert)
    dup = TilingCertificate(((box(Z, 0, 2), (0,)), (box(Z, 0, 2), (2,))))
    assert not verify_tiling(Z, box(Z, 0, 4), dup)


def test_collection_levels_and_membership():
    coll = tiling_collection({(-1,), (0,), (1,)}, Fraction(1, 2), Fraction(49, 100), Z)
    assert [len(s) for s in coll.seq.sets] == [9, 263, 8557]
    assert coll.members_invariant()
    F1 = coll.seq.sets[0]
    assert F1 in coll
    assert frozenset(sorted(F1)[:5]) in coll       # 5 >= 0.51 * 9
    assert frozenset(sorted(F1)[:4]) not in coll
    assert frozenset({(10 ** 6,)}) not in coll


def test_extract_tileable_z2():
    seq = build_foelner_sequence(QUARTER, Z2, seed_radius=2, nontrivial=2)
    coll = TilingCollection(seq)
    E = box(Z2, 0, 99) - box(Z2, 40, 43)
    Ep, cert = extract_tileable(E, coll, check_precondition=False)
    assert Ep <= E
    assert len(Ep) >= (1 - QUARTER) * len(E)
    assert verify_tiling(Z2, Ep, cert)
    assert all(T in coll for T, _ in cert.pairs)


@given(st.integers(-500, 500), st.integers(0, 3000))
def test_quasitile_random_intervals(lo, length):
    seq = build_foelner_sequence(QUARTER, Z, nontrivial=2)
    E = box(Z, lo, lo + length)
    qt = quasitile(E, seq, check_precondition=False)
    assert check_quasitiling(E, qt) == []
    assert qt.covered() == E  # the {e} levels fill whatever is left
    for lvl, F in zip(qt.tiles, seq.sets):
        for c, T in lvl:
            assert T <= F and len(T) >= (1 - QUARTER) * len(F)


@given(st.integers(1, 12), st.integers(1, 40))
def test_exactly_tileable_intervals(w, copies):
    seq = TowerSequence(Z, (box(Z, 0, w - 1),), QUARTER)
    E = box(Z, 0, w * copies - 1)
    qt = quasitile(E, seq, check_precondition=False)
    assert qt.covered() == E


def test_contract_failure_raises():
    # a tile wider than E cannot be placed, so nothing is covered
    seq = TowerSequence(Z, (box(Z, 0, 9),), QUARTER)
    with pytest.raises(ContractViolation):
        quasitile(box(Z, 0, 4), seq, check_precondition=False)
