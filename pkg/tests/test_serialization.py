import json
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from castlekit.clopen import Castle, ClopenSet, OdometerSpace, Rectangle, Tower
from castlekit.disjointifier import random_instance
from castlekit.group_core import GroupContext, box
from castlekit.serialization import (FormatError, castle_from_json, castle_to_json, config_hash,
                                     context_from_json, context_to_json, dec_frac, dec_int, dumps,
                                     element_from_json, element_to_json, enc_int, instance_from_json,
                                     instance_to_json)

TW = GroupContext.semidirect([[1, 1], [0, 1]])


@given(st.integers(-2 ** 80, 2 ** 80))
def test_integers_survive_json(v):
    assert dec_int(json.loads(json.dumps(enc_int(v)))) == v


def test_large_integers_become_strings():
    assert enc_int(2 ** 53) == str(2 ** 53)
    assert enc_int(2 ** 53 - 1) == 2 ** 53 - 1
    with pytest.raises(FormatError):
        dec_int(True)
    with pytest.raises(FormatError):
        dec_int("12a")


def test_rationals_are_exact():
    assert dec_frac("1/20490") == Fraction(1, 20490)
    assert dec_frac(3) == 3
    with pytest.raises(FormatError):
        dec_frac(0.1)
    with pytest.raises(FormatError):
        dec_frac("1/0")


@pytest.mark.parametrize("ctx", [GroupContext.zd(2), TW, GroupContext.finite([[0, 1], [1, 0]])])
def test_context_round_trip(ctx):
    back = context_from_json(json.loads(json.dumps(context_to_json(ctx))))
    assert back.kind == ctx.kind
    el = ctx.identity()
    assert element_from_json(back, element_to_json(ctx, el)) == el


def test_element_rank_checked():
    with pytest.raises(FormatError):
        element_from_json(GroupContext.zd(2), [1, 2, 3])
    with pytest.raises(FormatError):
        context_from_json({"kind": "free"})


def test_castle_round_trip():
    sp = OdometerSpace(TW, 2, 2)
    rect = Rectangle(TW, -1, 2, box(GroupContext.zd(2), [0, 0], [1, 1]))
    towers = (Tower(rect, sp.cylinder((2, 2), (0, 0), 0)),
              Tower(frozenset({((0, 0), 0), ((1, 0), 0)}), ClopenSet(sp, (2, 2), np.array([5, 9]))))
    castle = Castle(towers)
    back = castle_from_json(json.loads(dumps(castle_to_json(castle))))
    assert [(t.shape, t.base) for t in back.towers] == [(t.shape, t.base) for t in towers]
    assert castle_from_json({"towers": []}).towers == ()


def test_clopen_keys_validated():
    sp = OdometerSpace(TW, 2, 2)
    obj = castle_to_json(Castle((Tower(frozenset({((0, 0), 0)}), sp.cylinder((1, 1), (0, 0), 0)),)))
    obj["towers"][0]["base"]["keys"] = [999]
    with pytest.raises(FormatError):
        castle_from_json(obj)


def test_instance_round_trip():
    inst = random_instance(random.Random(3), 1, Fraction(9, 10))
    back = instance_from_json(json.loads(dumps(instance_to_json(inst))))
    assert back.S == inst.S and back.K == inst.K and back.delta == inst.delta
    assert [[B for B, _ in row] for row in back.rows] == [[B for B, _ in row] for row in inst.rows]
    assert back.check_hypotheses() == []


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": "1/2"}) == config_hash({"b": "1/2", "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
