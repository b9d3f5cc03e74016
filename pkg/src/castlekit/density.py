"""Upper and lower densities of clopen sets in odometer models.

For a plain Z^d odometer the translation action is uniquely ergodic and every
density equals the Haar measure.  In the H x| Z model the H-action only moves
the x-coordinate, so its ergodic measures are Haar(x) x delta_y; the upper and
lower H-densities of a clopen set are therefore the max and min over g-fibres
of the fibre's Haar proportion.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .clopen import ClopenSet, Point, level_keys


@dataclass(frozen=True)
class DensityEstimate:
    value: object  # Fraction (exact) or (lo, hi) pair of Fractions (empirical)
    mode: str
    foelner_set_used: frozenset = frozenset()
    sample_points: int = 0

    def to_json(self) -> dict:
        v = self.value
        val = [str(v[0]), str(v[1])] if isinstance(v, tuple) else str(v)
        return {"mode": self.mode, "value": val,
                "foelner": len(self.foelner_set_used), "samples": self.sample_points}


def exact_density(A: ClopenSet) -> Fraction:
    """Haar measure of A: the G-density, and the H-density on Z^d odometers."""
    return A.measure()


def h_density_bounds(A: ClopenSet) -> tuple[Fraction, Fraction]:
    """(lower, upper) H-density of a clopen set."""
    sp = A.space
    if not sp.has_g:
        m = A.measure()
        return m, m
    P, Q = sp.moduli(A.depth)
    counts = A.fiber_counts()
    per_fibre = P ** sp.d
    return Fraction(int(counts.min()), per_fibre), Fraction(int(counts.max()), per_fibre)


def lower_h_density(A: ClopenSet) -> Fraction:
    return h_density_bounds(A)[0]


def upper_h_density(A: ClopenSet) -> Fraction:
    return h_density_bounds(A)[1]


def foelner_average(A: ClopenSet, F: Iterable, x: Point) -> Fraction:
    F = list(F)
    if not F:
        raise ValueError("F must be nonempty")
    cyl = ClopenSet(A.space, A.depth, [x.key(A.depth)])
    keys = level_keys(F, cyl)
    return Fraction(int(np.isin(keys, A.keys).sum()), len(F))


def empirical_density(A: ClopenSet, F: Iterable, samples: Sequence[Point]) -> DensityEstimate:
    """Min and max over the sample points of (1/|F|) sum_{s in F} 1_A(s x)."""
    F = frozenset(F)
    if not F:
        raise ValueError("F must be nonempty")
    if not samples:
        raise ValueError("need at least one sample point")
    avgs = [foelner_average(A, F, x) for x in samples]
    return DensityEstimate((min(avgs), max(avgs)), "empirical", F, len(samples))


def shift_invariance_check(A: ClopenSet) -> bool:
    """Upper (and lower) H-density and Haar measure are unchanged under g."""
    sp = A.space
    if not sp.has_g:
        raise ValueError("needs an H x| Z context")
    gA = A.translate(sp.ctx.g_power(1))
    return (h_density_bounds(gA) == h_density_bounds(A)
            and exact_density(gA) == exact_density(A))


def density_report(A: ClopenSet, F=None, samples=None) -> dict:
    lo, hi = h_density_bounds(A)
    out = {"set": {"depth": list(A.depth), "cylinders": len(A)},
           "mode": "exact", "value": str(exact_density(A)),
           "h_density": [str(lo), str(hi)]}
    if F is not None and samples:
        est = empirical_density(A, F, samples)
        out["empirical"] = est.to_json()
    return out
