"""Command line front end.

Every subcommand reads a JSON config, runs one operation and writes a JSON
report holding the tool version, the command, the config verbatim and its
SHA-256, a status and the result.  Exit status: 0 success, 1 a checked
contract failed, 2 the input could not be parsed or validated.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from . import __version__
from .castle_builder import ConstructionError, build_castle, setup_parameters, shape_invariance
from .clopen import Rectangle, castle_footprint, check_castle
from .density import density_report, h_density_bounds, shift_invariance_check
from .disjointifier import (BoundViolation, HypothesisViolation, brute_force_flags, brute_force_pieces,
                            disjointify, random_instance, verify_bound)
from .group_core import GroupContext, GroupError, box, check_invariance, k_boundary
from .quasitiling import (ContractViolation, PreconditionError, SequenceTooLarge, build_foelner_sequence,
                          quasitile)
from .serialization import (FormatError, castle_from_json, castle_to_json, clopen_from_json,
                            context_from_json, dec_frac, dec_int, dumps, config_hash, instance_from_json,
                            set_from_json, set_to_json, space_from_json)

COMMANDS = ("boundary", "quasitile", "disjointify", "build-castle", "verify", "density")

# failures of a checked contract (status 1) versus unusable input (status 2)
_CONTRACT = (ConstructionError, ContractViolation, BoundViolation, HypothesisViolation,
             PreconditionError, SequenceTooLarge, AssertionError)
_INPUT = (FormatError, GroupError, KeyError, TypeError, ValueError, json.JSONDecodeError, OSError)


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    config: dict
    out: Optional[Path] = None
    oracle: bool = False
    trace: Optional[Path] = None
    castle_out: Optional[Path] = None
    castle_in: Optional[Path] = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if not isinstance(self.config, dict):
            raise UsageError("the config must be a JSON object")
        if self.oracle and self.command not in ("disjointify", "quasitile"):
            raise UsageError("--oracle applies to disjointify and quasitile only")


def _finite_set(ctx, cfg: dict, name: str) -> frozenset:
    if name in cfg:
        return set_from_json(ctx, cfg[name])
    if f"{name}_box" in cfg:
        b = cfg[f"{name}_box"]
        return box(ctx, b["lo"], b["hi"])
    raise UsageError(f"config needs {name!r} or {name + '_box'!r}")


# ---- subcommands ------------------------------------------------------------

def cmd_boundary(rc: RunConfig) -> dict:
    cfg = rc.config
    ctx = context_from_json(cfg["group"])
    K = set_from_json(ctx, cfg["K"])
    F = _finite_set(ctx, cfg, "F")
    bd = k_boundary(ctx, K, F)
    out = {"boundary_size": len(bd), "set_size": len(F)}
    if cfg.get("emit_boundary", False):
        out["boundary"] = set_to_json(ctx, bd)
    if "delta" in cfg:
        ok, ratio = check_invariance(ctx, K, dec_frac(cfg["delta"]), F)
        out.update({"invariant": ok, "ratio": ratio})
    return out


def _quasitile_oracle(E: frozenset, qt, eps: Fraction) -> dict:
    """Each clause recomputed by plain counting, independent of the checker."""
    ctx = qt.seq.ctx
    counts: dict = {}
    shrink_ok, inside = True, True
    for i, lvl in enumerate(qt.tiles):
        F = qt.seq.sets[i]
        for c, T in lvl:
            shrink_ok &= T <= F and len(T) * 1 >= (1 - eps) * len(F)
            for f in F:
                inside &= ctx.compose(f, c) in E
            for f in T:
                x = ctx.compose(f, c)
                counts[x] = counts.get(x, 0) + 1
    disjoint = all(v == 1 for v in counts.values())
    full = {ctx.compose(f, c) for i, lvl in enumerate(qt.tiles) for c, _ in lvl for f in qt.seq.sets[i]}
    return {"shrunken_tiles_disjoint": disjoint, "tiles_inside_levels": shrink_ok,
            "translates_inside_E": inside, "coverage_ok": len(full) >= (1 - eps) * len(E),
            "covered_matches": set(counts) == set(qt.covered())}


def cmd_quasitile(rc: RunConfig) -> dict:
    cfg = rc.config
    ctx = context_from_json(cfg["group"])
    eps = dec_frac(cfg["epsilon"])
    E = _finite_set(ctx, cfg, "E")
    seq = build_foelner_sequence(eps, ctx, seed_radius=dec_int(cfg.get("seed_radius", 1)),
                                 nontrivial=dec_int(cfg.get("nontrivial", 1)))
    qt = quasitile(E, seq, check_precondition=cfg.get("check_precondition", True))
    covered = qt.covered()
    out = {"levels": [len(F) for F in seq.sets], "m": seq.m,
           "tiles_per_level": [len(lvl) for lvl in qt.tiles],
           "covered": len(covered), "size": len(E), "covered_fraction": Fraction(len(covered), len(E)),
           "union_fraction": Fraction(len(qt.full_union()), len(E))}
    if rc.oracle:
        oracle = _quasitile_oracle(E, qt, eps)
        out["oracle"] = oracle
        if not all(oracle.values()):
            raise ContractViolation(f"oracle disagrees: {oracle}")
    return out


def cmd_disjointify(rc: RunConfig) -> dict:
    cfg = rc.config
    if "instance" in cfg:
        inst = instance_from_json(cfg["instance"])
    elif "random" in cfg:
        r = cfg["random"]
        K = set_from_json(GroupContext.zd(1), r["K"]) if "K" in r else None
        inst = random_instance(random.Random(dec_int(r.get("seed", 0))), dec_int(r["n"]), dec_frac(r["delta"]),
                               K, size_cap=dec_int(r.get("size_cap", 10 ** 4)))
    else:
        raise UsageError("config needs 'instance' or 'random'")
    errs = inst.check_hypotheses()
    part = disjointify(inst, enforce=not cfg.get("allow_invalid", False))
    out = {"hypotheses": errs or "ok", "bound": verify_bound(part, inst.delta, inst.S)}
    if rc.oracle:
        pieces = brute_force_pieces(inst)
        flags = brute_force_flags(inst, pieces)
        diff = {"pieces_equal": pieces == part.pieces, "flags_equal": flags == part.flags}
        out["oracle"] = diff
        if not all(diff.values()):
            raise ContractViolation(f"oracle disagrees: {diff}")
    return out


def castle_params(cfg: dict):
    ctx = context_from_json(cfg["group"])
    K = set_from_json(ctx, cfg["K"])
    return setup_parameters(ctx, K, dec_frac(cfg["delta"]), dec_frac(cfg["epsilon"]),
                            convention=cfg.get("convention", "e_g"),
                            r=dec_int(cfg["r"]) if "r" in cfg else None), ctx


def cmd_build_castle(rc: RunConfig) -> dict:
    cfg = rc.config
    params, ctx = castle_params(cfg)
    sp_cfg = dict(cfg.get("space", {}))
    sp_cfg["group"] = cfg["group"]
    sp_cfg.setdefault("p", 2)
    space = space_from_json(sp_cfg)
    res = build_castle(params, space, h_depth=cfg.get("h_depth"), max_depth=dec_int(cfg.get("max_depth", 12)),
                       stagger=bool(cfg.get("stagger", False)), order_seed=cfg.get("order_seed"),
                       trace=rc.trace is not None, check_iii=bool(cfg.get("check_iii", True)),
                       cross_check=dec_int(cfg.get("cross_check", 0)))
    if rc.trace is not None:
        rc.trace.write_text(dumps(res.builder.trace, indent=1))
    if rc.castle_out is not None:
        rc.castle_out.write_text(dumps(castle_to_json(res.castle)))
    report = dict(res.report)
    report["parameters"] = params.to_json()
    out = report["output"]
    if not out["density_ok"]:
        raise ContractViolation(f"footprint lower H-density {out['footprint_lower_density']} "
                                f"below {out['density_target']}")
    return report


def cmd_verify(rc: RunConfig) -> dict:
    cfg = rc.config
    if rc.castle_in is not None:
        castle = castle_from_json(json.loads(rc.castle_in.read_text()))
    else:
        castle = castle_from_json(cfg["castle"])
    out = {"towers": len(castle.towers), "disjoint": check_castle(castle)}
    if castle.towers:
        lo, hi = h_density_bounds(castle_footprint(castle))
        out["footprint_h_density"] = [lo, hi]
    if "K" in cfg and "delta" in cfg:
        ctx = castle.towers[0].base.space.ctx if castle.towers else context_from_json(cfg["group"])
        K = set_from_json(ctx, cfg["K"])
        delta = dec_frac(cfg["delta"])
        worst = Fraction(0)
        for t in castle.towers:
            if isinstance(t.shape, Rectangle) and ctx.kind == "semidirect" and all(k[1] == 0 for k in K):
                ratio = shape_invariance(ctx, frozenset(k[0] for k in K), (t.shape.lo, t.shape.hi), t.shape.block)
            else:
                ratio = check_invariance(ctx, K, delta, frozenset(t.shape))[1]
            worst = max(worst, ratio)
        out["max_shape_ratio"] = worst
        out["shapes_invariant"] = worst <= delta
    if "epsilon" in cfg and castle.towers:
        out["density_ok"] = out["footprint_h_density"][0] >= 1 - 3 * dec_frac(cfg["epsilon"])
    if not out["disjoint"] or not out.get("shapes_invariant", True) or not out.get("density_ok", True):
        raise ContractViolation(f"castle verification failed: {dumps(out)}")
    return out


def cmd_density(rc: RunConfig) -> dict:
    cfg = rc.config
    space = space_from_json(cfg["space"])
    A = clopen_from_json(space, cfg["set"])
    out = density_report(A)
    if space.has_g:
        out["shift_invariant"] = shift_invariance_check(A)
    return out


HANDLERS = {"boundary": cmd_boundary, "quasitile": cmd_quasitile, "disjointify": cmd_disjointify,
            "build-castle": cmd_build_castle, "verify": cmd_verify, "density": cmd_density}


# ---- plumbing ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="castlekit", description="exact castle and tiling tools")
    ap.add_argument("--version", action="version", version=f"castlekit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name != "verify", help="JSON config file")
        p.add_argument("--out", type=Path, help="write the report here instead of stdout")
        if name in ("disjointify", "quasitile"):
            p.add_argument("--oracle", action="store_true", help="diff against a brute-force recomputation")
        if name == "build-castle":
            p.add_argument("--trace", type=Path, help="dump every case decision to this file")
            p.add_argument("--castle-out", type=Path, help="write the castle JSON here")
        if name == "verify":
            p.add_argument("--castle", type=Path, help="castle JSON to verify")
    return ap


def parse(argv) -> RunConfig:
    ns = make_parser().parse_args(argv)
    if ns.config is not None:
        config = json.loads(ns.config.read_text())
    else:
        config = {}
    rc = RunConfig(ns.command, config, out=ns.out, oracle=getattr(ns, "oracle", False),
                   trace=getattr(ns, "trace", None), castle_out=getattr(ns, "castle_out", None),
                   castle_in=getattr(ns, "castle", None))
    if rc.command == "verify" and rc.castle_in is None and "castle" not in config:
        raise UsageError("verify needs --castle or a 'castle' entry in the config")
    rc.validate()
    return rc


def dispatch(rc: RunConfig) -> tuple[int, dict]:
    report = {"tool": "castlekit", "version": __version__, "command": rc.command,
              "config": rc.config, "config_hash": config_hash(rc.config)}
    try:
        report["result"] = HANDLERS[rc.command](rc)
        report["status"] = "ok"
        code = 0
    except _CONTRACT as exc:
        report["status"] = "contract-failure"
        report["error"] = {"type": type(exc).__name__, "message": str(exc),
                           "diagnostics": getattr(exc, "diagnostics", {})}
        code = 1
    except _INPUT as exc:
        report["status"] = "bad-input"
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        code = 2
    return code, report


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        rc = parse(argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, *_INPUT) as exc:
        print(dumps({"tool": "castlekit", "version": __version__, "status": "bad-input",
                     "error": {"type": type(exc).__name__, "message": str(exc)}}), file=sys.stderr)
        return 2
    code, report = dispatch(rc)
    text = dumps(report, indent=1)
    if rc.out is not None:
        rc.out.write_text(text + "\n")
    else:
        print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
