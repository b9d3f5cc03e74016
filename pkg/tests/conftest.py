import itertools
import json
import time
from pathlib import Path

import pytest
from hypothesis import settings

from castlekit.castle_builder import build_castle
from castlekit.cli import castle_params
from castlekit.group_core import GroupContext
from castlekit.serialization import space_from_json

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def brute_boundary(ctx, K, F, region):
    """Direct definition over an explicit candidate region."""
    F = set(F)
    out = set()
    for t in region:
        hits = [ctx.compose(k, t) in F for k in K]
        if any(hits) and not all(hits):
            out.add(t)
    return frozenset(out)


def zd_region(F, K, d):
    """All t with every coordinate within reach of F through K."""
    if not F:
        return []
    spread = max((abs(c) for k in K for c in k), default=0)
    lo = [min(f[c] for f in F) - spread for c in range(d)]
    hi = [max(f[c] for f in F) + spread for c in range(d)]
    return list(itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi))))


@pytest.fixture
def z1():
    return GroupContext.zd(1)


@pytest.fixture
def twisted():
    return GroupContext.semidirect([[1, 1], [0, 1]])


REFERENCE_CONFIG = Path(__file__).resolve().parent.parent / "scripts" / "reference_castle.json"


def load_reference(**overrides):
    cfg = {**json.loads(REFERENCE_CONFIG.read_text()), **overrides}
    params, _ = castle_params(cfg)
    space = space_from_json({"group": cfg["group"], **cfg.get("space", {})})
    return cfg, params, space


@pytest.fixture(scope="session")
def reference_build():
    """The reduced-scale Z x Z run, built once per session: (result, seconds)."""
    cfg, params, space = load_reference()
    t0 = time.perf_counter()
    res = build_castle(params, space, h_depth=cfg["h_depth"], max_depth=cfg["max_depth"],
                       cross_check=cfg["cross_check"])
    return res, time.perf_counter() - t0
