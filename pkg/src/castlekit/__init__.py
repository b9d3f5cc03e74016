"""Exact tools for Foelner sets, odometer castles and the H x| Z castle construction."""

__version__ = "0.1.0"

from .group_core import GroupContext, box, check_invariance, k_boundary
from .clopen import Castle, ClopenSet, OdometerSpace, Rectangle, Tower, check_castle
from .quasitiling import build_foelner_sequence, extract_tileable, quasitile
from .disjointifier import DisjointificationInstance, disjointify
from .castle_builder import ConstructionError, build_castle, setup_parameters

__all__ = [
    "GroupContext", "box", "check_invariance", "k_boundary",
    "Castle", "ClopenSet", "OdometerSpace", "Rectangle", "Tower", "check_castle",
    "build_foelner_sequence", "extract_tileable", "quasitile",
    "DisjointificationInstance", "disjointify",
    "ConstructionError", "build_castle", "setup_parameters",
]
