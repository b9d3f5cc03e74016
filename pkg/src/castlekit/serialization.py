"""JSON encoding for contexts, exact numbers, sets, clopen sets, castles,
certificates and disjointification instances.

Rationals are written as strings ("p/q"); integers outside the IEEE double
safe range are written as decimal strings so nothing is rounded on the way
through a JSON parser.  Decoders accept both forms.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from typing import Any

import numpy as np

from .clopen import Castle, ClopenSet, OdometerSpace, Rectangle, Tower
from .disjointifier import DisjointificationInstance
from .group_core import GroupContext
from .quasitiling import TilingCertificate

_SAFE = 2 ** 53


class FormatError(ValueError):
    """Malformed serialized input."""


# ---- numbers ----------------------------------------------------------------

def enc_int(v: int):
    v = int(v)
    return v if -_SAFE < v < _SAFE else str(v)


def dec_int(v) -> int:
    if isinstance(v, bool):
        raise FormatError(f"expected an integer, got {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        try:
            return int(v)
        except ValueError as exc:
            raise FormatError(f"bad integer {v!r}") from exc
    raise FormatError(f"expected an integer, got {v!r}")


def enc_frac(v) -> str:
    return str(Fraction(v))


def dec_frac(v) -> Fraction:
    """Exact rational from "p/q", a decimal string or an int (floats are refused)."""
    if isinstance(v, bool) or isinstance(v, float):
        raise FormatError(f"rationals must be strings or integers, got {v!r}")
    try:
        return Fraction(v)
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise FormatError(f"bad rational {v!r}") from exc


# ---- groups -----------------------------------------------------------------

def context_to_json(ctx: GroupContext) -> dict:
    if ctx.kind == "zd":
        return {"kind": "zd", "d": ctx.d}
    if ctx.kind == "semidirect":
        return {"kind": "semidirect", "alpha": [[enc_int(v) for v in row] for row in ctx.alpha]}
    return {"kind": "finite", "table": [list(row) for row in ctx.table]}


def context_from_json(obj: dict) -> GroupContext:
    try:
        kind = obj["kind"]
        if kind == "zd":
            return GroupContext.zd(dec_int(obj["d"]))
        if kind == "semidirect":
            return GroupContext.semidirect([[dec_int(v) for v in row] for row in obj["alpha"]])
        if kind == "finite":
            return GroupContext.finite([[dec_int(v) for v in row] for row in obj["table"]])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad group descriptor {obj!r}") from exc
    raise FormatError(f"unknown group kind {obj.get('kind')!r}")


def element_to_json(ctx: GroupContext, el):
    if ctx.kind == "zd":
        return [enc_int(v) for v in el]
    if ctx.kind == "semidirect":
        h, i = el
        return [[enc_int(v) for v in h], enc_int(i)]
    return enc_int(el)


def element_from_json(ctx: GroupContext, obj):
    try:
        if ctx.kind == "zd":
            el = tuple(dec_int(v) for v in obj)
            if len(el) != ctx.d:
                raise FormatError(f"element {obj!r} has the wrong rank")
            return el
        if ctx.kind == "semidirect":
            h, i = obj
            h = tuple(dec_int(v) for v in h)
            if len(h) != ctx.d:
                raise FormatError(f"element {obj!r} has the wrong rank")
            return (h, dec_int(i))
        return dec_int(obj)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"bad group element {obj!r}") from exc


def set_to_json(ctx: GroupContext, S) -> list:
    return [element_to_json(ctx, s) for s in sorted(S, key=ctx.sort_key)]


def set_from_json(ctx: GroupContext, obj) -> frozenset:
    if not isinstance(obj, list):
        raise FormatError("a finite set is a JSON list of elements")
    return frozenset(element_from_json(ctx, v) for v in obj)


# ---- odometer objects -------------------------------------------------------

def space_to_json(sp: OdometerSpace) -> dict:
    return {"group": context_to_json(sp.ctx), "p": sp.p, "q": sp.q}


def space_from_json(obj: dict) -> OdometerSpace:
    try:
        q = obj.get("q")
        return OdometerSpace(context_from_json(obj["group"]), dec_int(obj["p"]), None if q is None else dec_int(q))
    except KeyError as exc:
        raise FormatError(f"space descriptor misses {exc}") from exc


def clopen_to_json(A: ClopenSet) -> dict:
    return {"depth": list(A.depth), "keys": [enc_int(k) for k in A.keys]}


def clopen_from_json(sp: OdometerSpace, obj: dict) -> ClopenSet:
    depth = tuple(dec_int(v) for v in obj["depth"])
    keys = np.array([dec_int(k) for k in obj["keys"]], dtype=np.int64)
    if len(keys) and (keys.min() < 0 or keys.max() >= sp.size(depth)):
        raise FormatError("clopen key outside the space at that depth")
    return ClopenSet(sp, depth, keys)


def shape_to_json(ctx: GroupContext, shape) -> dict:
    if isinstance(shape, Rectangle):
        return {"rectangle": {"lo": shape.lo, "hi": shape.hi,
                              "block": [[enc_int(v) for v in b] for b in sorted(shape.block)]}}
    return {"set": set_to_json(ctx, shape)}


def shape_from_json(ctx: GroupContext, obj: dict):
    if "rectangle" in obj:
        r = obj["rectangle"]
        block = frozenset(tuple(dec_int(v) for v in b) for b in r["block"])
        return Rectangle(ctx, dec_int(r["lo"]), dec_int(r["hi"]), block)
    return set_from_json(ctx, obj["set"])


def castle_to_json(castle: Castle) -> dict:
    if not castle.towers:
        return {"towers": []}
    sp = castle.towers[0].base.space
    return {"space": space_to_json(sp),
            "towers": [{"shape": shape_to_json(sp.ctx, t.shape), "base": clopen_to_json(t.base)}
                       for t in castle.towers]}


def castle_from_json(obj: dict) -> Castle:
    if not obj.get("towers"):
        return Castle(())
    sp = space_from_json(obj["space"])
    return Castle(tuple(Tower(shape_from_json(sp.ctx, t["shape"]), clopen_from_json(sp, t["base"]))
                        for t in obj["towers"]))


def certificate_to_json(ctx: GroupContext, cert: TilingCertificate) -> list:
    return [{"tile": set_to_json(ctx, tile), "at": element_to_json(ctx, c)} for tile, c in cert.pairs]


def certificate_from_json(ctx: GroupContext, obj) -> TilingCertificate:
    return TilingCertificate(tuple((set_from_json(ctx, p["tile"]), element_from_json(ctx, p["at"]))
                                   for p in obj))


def instance_to_json(inst: DisjointificationInstance) -> dict:
    ctx = inst.ctx
    return {"group": context_to_json(ctx), "S": set_to_json(ctx, inst.S),
            "K": set_to_json(ctx, inst.K), "delta": enc_frac(inst.delta),
            "rows": [[{"set": set_to_json(ctx, B), "certificate": certificate_to_json(ctx, cert)}
                      for B, cert in row] for row in inst.rows]}


def instance_from_json(obj: dict) -> DisjointificationInstance:
    try:
        ctx = context_from_json(obj["group"])
        rows = [[(set_from_json(ctx, e["set"]), certificate_from_json(ctx, e["certificate"])) for e in row]
                for row in obj["rows"]]
        return DisjointificationInstance(ctx, set_from_json(ctx, obj["S"]), rows,
                                         set_from_json(ctx, obj["K"]), dec_frac(obj["delta"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad instance: {exc}") from exc


# ---- reports ----------------------------------------------------------------

def to_jsonable(obj: Any):
    """Recursively convert report values (Fractions, numpy scalars, sets, tuples)."""
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, bool) or obj is None or isinstance(obj, (str, float)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return enc_int(int(obj))
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (frozenset, set)):
        return [to_jsonable(v) for v in sorted(obj, key=repr)]
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in obj]
    return repr(obj)


def dumps(obj: Any, **kw) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, **kw)


def config_hash(config: Any) -> str:
    return hashlib.sha256(dumps(config, separators=(",", ":")).encode()).hexdigest()
