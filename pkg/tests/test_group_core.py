from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from castlekit.group_core import (GroupContext, GroupError, apply_alpha_power, box, check_invariance,
                                  compose, convention_k, g_interval, inverse_set, k_boundary,
                                  product_set)

from conftest import brute_boundary, zd_region

Z = GroupContext.zd(1)
Z2 = GroupContext.zd(2)
TW = GroupContext.semidirect([[1, 1], [0, 1]])


def ints(xs):
    return frozenset((x,) for x in xs)


def test_twisted_product():
    assert TW.compose(((0, 0), 1), ((0, 1), 0)) == ((1, 1), 1)


def test_identity_law():
    a = ((3, -2), 5)
    assert TW.compose(TW.identity(), a) == a == TW.compose(a, TW.identity())


def test_apply_alpha_examples():
    assert apply_alpha_power(TW, 1, {(0, 1)}) == {(1, 1)}
    F = {(1, 2), (3, 4)}
    assert apply_alpha_power(TW, 0, F) == F
    assert apply_alpha_power(GroupContext.semidirect([[1, 0], [0, 1]]), 7, F) == F


def test_interval_boundary_example():
    F = ints(range(10))
    K = ints([-1, 0, 1])
    assert k_boundary(Z, K, F) == ints([-1, 0, 9, 10])
    assert check_invariance(Z, K, Fraction(2, 5), F) == (True, Fraction(2, 5))
    assert check_invariance(Z, K, Fraction(3, 10), F)[0] is False


def test_trivial_boundaries():
    assert k_boundary(Z, ints([0]), ints(range(5))) == frozenset()
    assert k_boundary(Z, ints([0, 1]), frozenset()) == frozenset()
    assert check_invariance(Z, ints([0]), 0, ints([4, 9]))[0]


def test_product_and_inverse():
    F = ints(range(5))
    assert product_set(Z, F, inverse_set(Z, F)) == ints(range(-4, 5))
    assert product_set(Z, F, {Z.identity()}) == F
    assert inverse_set(TW, {((1, 0), 2)}) == {TW.inverse(((1, 0), 2))}


def test_mismatched_elements_rejected():
    with pytest.raises(GroupError):
        compose(Z, (1,), (1, 2))


def test_convention_sets():
    assert convention_k(TW, "literal") == {TW.g_power(1)}
    I = g_interval(TW, 0, 31)
    assert check_invariance(TW, convention_k(TW, "e_g"), Fraction(1, 16), I) == (True, Fraction(1, 16))
    assert check_invariance(TW, convention_k(TW, "literal"), 0, I)[1] == 0


elems = st.tuples(st.tuples(st.integers(-6, 6), st.integers(-6, 6)), st.integers(-4, 4))


@given(elems, elems, elems)
def test_semidirect_associative(a, b, c):
    assert TW.compose(TW.compose(a, b), c) == TW.compose(a, TW.compose(b, c))


@given(elems)
def test_semidirect_inverse(a):
    assert TW.compose(a, TW.inverse(a)) == TW.identity() == TW.compose(TW.inverse(a), a)


@given(st.tuples(st.integers(-9, 9), st.integers(-9, 9)))
def test_defining_relation(h):
    g = TW.g_power(1)
    lhs = TW.compose(TW.compose(g, (h, 0)), TW.inverse(g))
    assert lhs == (TW.apply_alpha(1, h), 0)


small = st.frozensets(st.tuples(st.integers(-5, 5)), min_size=1, max_size=12)


@given(small, small)
def test_boundary_matches_definition_z(K, F):
    assert k_boundary(Z, K, F) == brute_boundary(Z, K, F, zd_region(F, K, 1))


@given(st.frozensets(st.tuples(st.integers(-2, 2), st.integers(-2, 2)), min_size=1, max_size=5),
       st.integers(0, 60), st.integers(0, 60))
def test_dense_fast_path_matches_definition(K, w, h):
    # large enough to take the grid path
    F = box(Z2, (0, 0), (w, h)) - box(Z2, (w // 3, h // 3), (w // 2, h // 2))
    assert k_boundary(Z2, K, F) == brute_boundary(Z2, K, F, zd_region(F, K, 2))


tiny = st.tuples(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), st.integers(-2, 2))
# every t with Kt meeting F has coordinates within 18 and exponent within 4
REGION = [((a, b), i) for a in range(-18, 19) for b in range(-18, 19) for i in range(-4, 5)]


@given(st.frozensets(tiny, min_size=1, max_size=3), st.frozensets(tiny, min_size=1, max_size=6))
def test_boundary_matches_definition_semidirect(K, F):
    assert k_boundary(TW, K, F) == brute_boundary(TW, K, F, REGION)
