"""Composite score assembly.

Two point tables (filter fidelity, judge verdict), one leniency point for
fully-benign extras, a confidence multiplier, and a 0-100 scale. All pure
functions; the only rounding happens once, half away from zero.
"""

from __future__ import annotations

import math
from decimal import ROUND_HALF_UP, Decimal

from .errors import ConfidenceOutOfRange
from .model import FilterStatus, ScoreBreakdown, Tier, Verdict

__all__ = [
    "FILTER_POINTS",
    "VERDICT_POINTS",
    "filter_points",
    "verdict_points",
    "confidence_multiplier",
    "leniency_point",
    "assign_tier",
    "composite",
]

FILTER_POINTS = {
    FilterStatus.FULLY_APPLIED: 5,
    FilterStatus.FULLY_APPLIED_WITH_EXTRAS: 4,
    FilterStatus.PARTIALLY_APPLIED: 3,
    FilterStatus.NOT_APPLIED: 0,
}

VERDICT_POINTS = {
    Verdict.CORRECT: 5,
    Verdict.LIKELY_CORRECT: 3,
    Verdict.POTENTIALLY_INCORRECT: 2,
    Verdict.INCORRECT: 0,
}

# Maximum attainable base points; leniency cannot push the score past this.
_BASE_CAP = 10


def filter_points(status: FilterStatus) -> int:
    return FILTER_POINTS[status]


def verdict_points(verdict: Verdict) -> int:
    return VERDICT_POINTS[verdict]


def confidence_multiplier(gamma: float) -> float:
    """Dampen the score when the judge is unsure of its own verdict."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfidenceOutOfRange(f"confidence {gamma!r} outside [0, 1]")
    if gamma >= 0.85:
        return 1.0
    if gamma >= 0.65:
        return 0.8
    return 0.5


def leniency_point(status: FilterStatus, extras_all_benign: bool) -> int:
    """Give back the point lost to extras when every extra is benign."""
    applies = status is FilterStatus.FULLY_APPLIED_WITH_EXTRAS and extras_all_benign
    return 1 if applies else 0


def assign_tier(phi: float) -> Tier:
    if phi >= 90.0:
        return Tier.EXCELLENT
    if phi >= 75.0:
        return Tier.GOOD
    if phi >= 50.0:
        return Tier.MARGINAL
    return Tier.POOR


def _round2(value: Decimal) -> float:
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def composite(status: FilterStatus, extras_all_benign: bool,
              verdict: Verdict, gamma: float) -> ScoreBreakdown:
    """Combine all scoring signals into the final 0-100 score."""
    fp = filter_points(status)
    vp = verdict_points(verdict)
    lp = leniency_point(status, extras_all_benign)
    base = fp + vp + lp
    mult = confidence_multiplier(gamma)
    raw = Decimal(min(base, _BASE_CAP)) / _BASE_CAP * 100 * Decimal(str(mult))
    phi = _round2(raw)
    return ScoreBreakdown(
        filter_points=fp,
        verdict_points=vp,
        leniency=lp,
        base=base,
        multiplier=mult,
        phi=phi,
        tier=assign_tier(phi),
    )


def mean_phi(phis) -> "float | None":
    if not phis:
        return None
    return _round2(sum(Decimal(str(p)) for p in phis) / len(phis))


def p90_phi(phis) -> "float | None":
    """Nearest-rank 90th percentile: the value at rank ceil(0.9 n)."""
    if not phis:
        return None
    ordered = sorted(phis)
    rank = math.ceil(0.9 * len(ordered))
    return ordered[rank - 1]
