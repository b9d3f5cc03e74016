import random
from fractions import Fraction

import numpy as np
from hypothesis import given, strategies as st

from castlekit.clopen import (Castle, ClopenSet, OdometerSpace, Tower, act, build_initial_castle,
                              castle_footprint, check_castle, check_tower, locate_patch, owner_array)
from castlekit.group_core import GroupContext, box, k_boundary

Z = GroupContext.zd(1)
TW = GroupContext.semidirect([[1, 1], [0, 1]])
ODO = OdometerSpace(Z, 2)
TWS = OdometerSpace(TW, 2, 3)


def S(*xs):
    return frozenset((x,) for x in xs)


def test_carry():
    x = ODO.point((2, 0), (3,))
    assert act((1,), x).x == (0,)


def test_twisted_step():
    x = TWS.point((1, 1), (0, 1), 2)
    y = act(TW.g_power(1), x)
    assert y.x == (1, 1) and y.y == 0  # 2 + 1 wraps mod 3


def test_measures():
    A = ODO.cylinder((3, 0), (5,))
    assert A.measure() == Fraction(1, 8)
    assert A.union(A.complement()).measure() == 1
    assert TWS.cylinder((2, 1), (1, 3), 2).measure() == Fraction(1, 16 * 3)


def test_tower_examples():
    V = ODO.cylinder((2, 0), (0,))
    assert check_tower(S(0), V)
    assert check_tower(S(0, 1, 2, 3), V)
    assert not check_tower(S(0, 4), V)


def test_castle_examples():
    V0, V2 = ODO.cylinder((2, 0), (0,)), ODO.cylinder((2, 0), (2,))
    assert check_castle(Castle((Tower(S(0, 1), V0), Tower(S(0, 1), V2))))
    assert not check_castle(Castle((Tower(S(0, 1), V0), Tower(S(1, 2), V0))))


def test_initial_castle_z():
    castle, rep = build_initial_castle(ODO, h_depth=4)
    assert len(castle.towers) == 1
    t = castle.towers[0]
    assert frozenset(t.shape) == S(*range(16))
    assert castle_footprint(castle).measure() == 1
    assert len(k_boundary(Z, S(-1, 0, 1), t.shape)) == 4


def test_initial_castle_twisted_is_full():
    castle, rep = build_initial_castle(TWS, h_depth=2, freeness_window=[TW.g_power(i) for i in range(-2, 3)])
    assert check_castle(castle)
    assert castle_footprint(castle).measure() == 1


keysets = st.sets(st.integers(0, 2 ** 3 * 2 ** 3 * 9 - 1), max_size=40)


@given(keysets, keysets)
def test_algebra_laws(a, b):
    A, B = ClopenSet(TWS, (3, 2), list(a)), ClopenSet(TWS, (3, 2), list(b))
    assert A.union(B).measure() + A.intersection(B).measure() == A.measure() + B.measure()
    assert A.difference(B).isdisjoint(B)
    assert A.refine((4, 3)).measure() == A.measure()
    assert A.refine((4, 3)) == A


@given(keysets, st.tuples(st.integers(-5, 5), st.integers(-5, 5)), st.integers(-4, 4))
def test_translation_preserves_measure(a, h, i):
    A = ClopenSet(TWS, (3, 2), list(a))
    T = A.translate((h, i))
    assert T.measure() == A.measure()
    assert T.translate(TW.inverse((h, i))) == A


def test_locate_patch_matches_pointwise():
    castle, _ = build_initial_castle(TWS, h_depth=2)
    d = castle.depth()
    rng = random.Random(5)
    x = TWS.point(d, (1, 2), 4)
    W = [((rng.randrange(-9, 9), rng.randrange(-9, 9)), rng.randrange(-5, 5)) for _ in range(150)]
    owner = {}
    for k, t in enumerate(castle.towers):
        for key in t.base.refine(d).keys:
            owner[int(key)] = k
    got = locate_patch(x, W, castle)
    assert all(got[w] == owner.get(act(w, x).key(d)) for w in W)
    assert locate_patch(x, [], castle) == {}


def test_locate_patch_base_point():
    castle, _ = build_initial_castle(ODO, h_depth=3)
    x = ODO.point((3, 0), (0,))
    assert locate_patch(x, [(0,)], castle) == {(0,): 0}


def test_full_footprint_unique_cover():
    castle, _ = build_initial_castle(TWS, h_depth=2)
    d = castle.depth()
    owner = owner_array(castle, d)
    x = TWS.point(d, (3, 1), 1)
    # each point is s.y for exactly one base point y and level s
    count = 0
    for k, t in enumerate(castle.towers):
        for s in t.shape:
            w = TW.inverse(s)
            count += owner[act(w, x).key(d)] == k
    assert count == 1
