import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from castlekit.disjointifier import (DisjointificationInstance, HypothesisViolation, PiecePartition,
                                     brute_force_flags, brute_force_pieces, disjointify,
                                     gamma_refinement, min_tile_length, random_instance,
                                     refinement_consistent, verify_bound)
from castlekit.group_core import GroupContext, box, check_invariance
from castlekit.quasitiling import TilingCertificate

Z = GroupContext.zd(1)
K01 = frozenset({(0,), (1,)})


def interval_row(lo, lengths):
    """One row made of a single set tiled by consecutive intervals."""
    pairs, pos = [], lo
    for ln in lengths:
        pairs.append((box(Z, 0, ln - 1), (pos,)))
        pos += ln
    return [(box(Z, lo, pos - 1), TilingCertificate(tuple(pairs)))]


def test_single_row_covering_s():
    S = box(Z, 0, 9)
    inst = DisjointificationInstance(Z, S, [interval_row(0, [5, 5])], K01, Fraction(1, 2))
    part = disjointify(inst, enforce=False)
    assert part.pieces == {(1,): S}
    assert not any(part.flags.values())
    assert part.is_partition()
    ref = gamma_refinement(inst)
    assert refinement_consistent(inst, ref, part)


def test_rows_missing_s():
    S = box(Z, 0, 9)
    inst = DisjointificationInstance(Z, S, [interval_row(100, [4]), interval_row(-50, [3, 3])],
                                     K01, Fraction(1, 2))
    part = disjointify(inst, enforce=False)
    assert part.pieces == {(0, 0): S}


def test_single_tile_refinement():
    S = box(Z, 0, 9)
    inst = DisjointificationInstance(Z, S, [interval_row(0, [10])], frozenset({(0,)}), Fraction(1, 2))
    # D = [-9, 9] swallows the whole interval, so no tile sits in the D-interior
    assert gamma_refinement(inst).pieces == {}


def test_refinement_pieces_are_interior_tiles():
    S = box(Z, 0, 99)
    inst = DisjointificationInstance(Z, S, [interval_row(0, [5] * 20)], frozenset({(0,)}), Fraction(1, 2))
    ref = gamma_refinement(inst)
    # D = [-4, 4]; tiles starting in [5, 90] avoid the D-boundary
    assert sorted(min(E)[0] for E in ref.pieces.values()) == list(range(5, 95, 5))
    assert all(len(E) == 5 for E in ref.pieces.values())
    assert set(ref.containment.values()) == {(1,)}


def test_hypothesis_violations_named():
    S = box(Z, 0, 9)
    overlapping = interval_row(0, [5]) + interval_row(3, [4])
    inst = DisjointificationInstance(Z, S, [overlapping], K01, Fraction(1, 2))
    errs = inst.check_hypotheses()
    assert any("not pairwise disjoint" in e for e in errs)
    assert any("not (K" in e for e in errs)
    with pytest.raises(HypothesisViolation):
        disjointify(inst)
    bad_cert = [(box(Z, 0, 9), TilingCertificate(((box(Z, 0, 4), (0,)),)))]
    inst = DisjointificationInstance(Z, S, [bad_cert], K01, Fraction(1, 2))
    assert any("certificate" in e for e in inst.check_hypotheses())


def test_verify_bound_reports_failure():
    S = box(Z, 0, 9)
    part = PiecePartition(S, {(0,): S}, {(0,): True})
    rep = verify_bound(part, Fraction(1, 2), S)
    assert rep["partition"] and not rep["holds"]
    part = PiecePartition(S, {(0,): S}, {(0,): False})
    assert verify_bound(part, Fraction(1, 2), S)["holds"]
    broken = PiecePartition(S, {(0,): box(Z, 0, 4)}, {(0,): False})
    assert not verify_bound(broken, Fraction(1, 2), S)["partition"]


def test_min_tile_length_oracle():
    for den in (2, 3, 7, 50):
        d = Fraction(1, den)
        L = min_tile_length(Z, K01, d)
        assert check_invariance(Z, K01, d, box(Z, 0, L - 1))[0]
        assert L == 1 or not check_invariance(Z, K01, d, box(Z, 0, L - 2))[0]


SETTINGS = [(1, Fraction(9, 10), None), (1, Fraction(999, 1000), None),
            (2, Fraction(999, 1000), None), (3, Fraction(1, 2), {(0,)})]


@settings(max_examples=12)
@given(st.integers(0, 10 ** 6), st.sampled_from(SETTINGS))
def test_random_instances_match_oracle(seed, setting):
    n, delta, K = setting
    inst = random_instance(random.Random(seed), n, delta, K)
    assert inst.check_hypotheses() == []
    part = disjointify(inst)
    assert part.is_partition()
    pieces = brute_force_pieces(inst)
    assert pieces == part.pieces
    assert brute_force_flags(inst, pieces) == part.flags
    assert len(part.omega0_union()) <= delta * len(inst.S)
    ref = gamma_refinement(inst)
    assert refinement_consistent(inst, ref, part)
    assert ref.checks["e_boundary"]
    lhs, rhs = ref.checks["e_boundary2"]
    assert lhs <= rhs
    lhs, rhs = ref.checks["e_multiplicity"]
    assert lhs <= rhs


def test_oversized_request_refused():
    with pytest.raises(HypothesisViolation):
        random_instance(random.Random(0), 3, Fraction(1, 2))
