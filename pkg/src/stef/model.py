"""Core domain types shared by every stage of the evaluator.

Everything here is an immutable value object. Construction performs the
cheap canonicalization (column refs are case-folded and quote-stripped once,
at the edge) so later stages can compare fields directly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Union

from .errors import EmptyInput, InternalInvariantViolation

__all__ = [
    "FilterOp",
    "AggFunc",
    "FilterStatus",
    "Verdict",
    "Tier",
    "RuleId",
    "EvalMode",
    "canonical_ref",
    "FilterTriple",
    "AggregationSpec",
    "Projection",
    "OrderItem",
    "JoinSpec",
    "QuestionSpec",
    "SqlSpec",
    "AppRules",
    "EMPTY_RULES",
    "EvalInstance",
    "validate_instance",
    "NormalizationAnnotation",
    "AlignmentRecord",
    "JudgeOutput",
    "ScoreBreakdown",
]


class FilterOp(str, Enum):
    EQ = "eq"
    NEQ = "neq"
    LT = "lt"
    LTE = "lte"
    GT = "gt"
    GTE = "gte"
    LIKE = "like"
    ILIKE = "ilike"
    IN = "in"
    BETWEEN = "between"
    IS_NULL = "is_null"
    IS_NOT_NULL = "is_not_null"
    COMPLEX = "complex"


class AggFunc(str, Enum):
    SUM = "sum"
    AVG = "avg"
    COUNT = "count"
    MIN = "min"
    MAX = "max"


class FilterStatus(str, Enum):
    FULLY_APPLIED = "fully_applied"
    FULLY_APPLIED_WITH_EXTRAS = "fully_applied_with_extras"
    PARTIALLY_APPLIED = "partially_applied"
    NOT_APPLIED = "not_applied"


class Verdict(str, Enum):
    CORRECT = "correct"
    LIKELY_CORRECT = "likely_correct"
    POTENTIALLY_INCORRECT = "potentially_incorrect"
    INCORRECT = "incorrect"


class Tier(str, Enum):
    EXCELLENT = "excellent"
    GOOD = "good"
    MARGINAL = "marginal"
    POOR = "poor"


class RuleId(str, Enum):
    REQUIRED_GROUP_BY = "required_group_by"
    BENIGN_GROUP_BY = "benign_group_by"
    SENSIBLE_ORDER_BY = "sensible_order_by"
    SAFETY_LIMIT = "safety_limit"


class EvalMode(str, Enum):
    FULL = "full"
    JUDGE_ONLY = "judge_only"


_NON_ALNUM = re.compile(r"[^a-z0-9]+")

Scalar = Union[str, int, float]
RhsValue = Optional[Union[Scalar, tuple]]


def canonical_ref(text: str) -> str:
    """Collapse a column reference to its comparison key.

    Lowercase, strip quoting, drop any table qualifier, and squash
    non-alphanumerics so `spend_table."Total_Spend"` and "total spend"
    meet at the same key. A bare star is preserved.
    """
    text = text.strip()
    if text == "*":
        return "*"
    text = text.strip('`"').lower()
    if "." in text:
        text = text.rsplit(".", 1)[-1].strip('`"')
    return _NON_ALNUM.sub("", text)


# Ops whose rhs is a container rather than a scalar.
_TUPLE_OPS = frozenset({FilterOp.IN, FilterOp.BETWEEN})
_NO_RHS_OPS = frozenset({FilterOp.IS_NULL, FilterOp.IS_NOT_NULL, FilterOp.COMPLEX})


@dataclass(frozen=True)
class FilterTriple:
    """One conjunct of a WHERE clause, or one condition implied by a question.

    COMPLEX triples hold undecomposable condition text verbatim in `lhs`
    and carry no rhs semantics. `is_literal_rhs` distinguishes constant
    comparisons from column-to-column ones.
    """

    lhs: str
    op: FilterOp
    rhs: RhsValue = None
    is_literal_rhs: bool = True

    def __post_init__(self):
        if self.op is FilterOp.COMPLEX:
            object.__setattr__(self, "lhs", " ".join(self.lhs.split()))
            object.__setattr__(self, "rhs", None)
            return
        object.__setattr__(self, "lhs", canonical_ref(self.lhs))
        if not self.lhs:
            raise ValueError("filter lhs must name a column")
        if self.op in _NO_RHS_OPS:
            if self.rhs is not None:
                raise ValueError(f"{self.op.value} takes no rhs")
            return
        if self.op is FilterOp.IN:
            if not isinstance(self.rhs, tuple) or not self.rhs:
                raise ValueError("IN requires a non-empty tuple rhs")
        elif self.op is FilterOp.BETWEEN:
            if not isinstance(self.rhs, tuple) or len(self.rhs) != 2:
                raise ValueError("BETWEEN requires exactly two rhs values")
        elif self.rhs is None:
            raise ValueError(f"{self.op.value} requires an rhs")
        if not self.is_literal_rhs and isinstance(self.rhs, str):
            object.__setattr__(self, "rhs", canonical_ref(self.rhs))

    def to_dict(self) -> dict:
        rhs = list(self.rhs) if isinstance(self.rhs, tuple) else self.rhs
        return {
            "lhs": self.lhs,
            "op": self.op.value,
            "rhs": rhs,
            "is_literal_rhs": self.is_literal_rhs,
        }


@dataclass(frozen=True)
class AggregationSpec:
    """An aggregate request: function, target column, distinct flag."""

    func: AggFunc
    column: str
    distinct: bool = False

    def __post_init__(self):
        object.__setattr__(self, "column", canonical_ref(self.column))
        if self.column == "*" and self.func is not AggFunc.COUNT:
            raise ValueError("star argument is only valid for COUNT")
        if not self.column:
            raise ValueError("aggregation needs a column or star")

    @property
    def canonical(self) -> str:
        inner = f"distinct {self.column}" if self.distinct else self.column
        return f"{self.func.value}({inner})"

    def to_dict(self) -> dict:
        return {"func": self.func.value, "column": self.column, "distinct": self.distinct}


@dataclass(frozen=True)
class Projection:
    """One SELECT-list entry with every name it can be addressed by."""

    expr: str
    alias: Optional[str] = None
    aggregation: Optional[AggregationSpec] = None
    names: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {
            "expr": self.expr,
            "alias": self.alias,
            "aggregation": self.aggregation.to_dict() if self.aggregation else None,
            "names": sorted(self.names),
        }


@dataclass(frozen=True)
class OrderItem:
    expr: str
    desc: bool = False

    def to_dict(self) -> dict:
        return {"expr": self.expr, "desc": self.desc}


@dataclass(frozen=True)
class JoinSpec:
    table: str
    condition: str

    def to_dict(self) -> dict:
        return {"table": self.table, "condition": self.condition}


@dataclass(frozen=True)
class QuestionSpec:
    """Semantic requirements extracted from the question text."""

    outputs: frozenset = frozenset()
    aggregations: frozenset = frozenset()
    filters: frozenset = frozenset()
    group_by: frozenset = frozenset()
    explicit_order: bool = False
    topk_request: Optional[int] = None
    conflicts: tuple = ()

    def __post_init__(self):
        if self.topk_request is not None:
            if self.topk_request < 1:
                raise ValueError("top-k request must be positive")
            # A top-k ask only makes sense against an ordering or an aggregate.
            if not self.explicit_order and not self.aggregations:
                raise ValueError("top-k request without ordering or aggregation")

    def is_empty(self) -> bool:
        return not (self.outputs or self.aggregations or self.filters
                    or self.group_by or self.explicit_order or self.topk_request)

    def to_dict(self) -> dict:
        return {
            "outputs": sorted(self.outputs),
            "aggregations": [a.to_dict() for a in _sorted_aggs(self.aggregations)],
            "filters": [f.to_dict() for f in sorted_filters(self.filters)],
            "group_by": sorted(self.group_by),
            "explicit_order": self.explicit_order,
            "topk_request": self.topk_request,
            "conflicts": list(self.conflicts),
        }


@dataclass(frozen=True)
class SqlSpec:
    """Structural facts recovered from one SELECT statement."""

    projections: tuple = ()
    aggregations: frozenset = frozenset()
    filters: frozenset = frozenset()
    group_by: tuple = ()
    order_by: tuple = ()
    limit: Optional[int] = None
    tables: tuple = ()
    joins: tuple = ()

    def __post_init__(self):
        for p in self.projections:
            if p.aggregation is not None and p.aggregation not in self.aggregations:
                raise InternalInvariantViolation(
                    f"projected aggregate {p.aggregation.canonical} missing from aggregations")
        agg_forms = {a.canonical for a in self.aggregations}
        for g in self.group_by:
            if g in agg_forms:
                raise InternalInvariantViolation(f"group_by entry {g} is an aggregate")
        if self.limit is not None and self.limit < 0:
            raise ValueError("limit must be non-negative")

    def to_dict(self) -> dict:
        return {
            "projections": [p.to_dict() for p in self.projections],
            "aggregations": [a.to_dict() for a in _sorted_aggs(self.aggregations)],
            "filters": [f.to_dict() for f in sorted_filters(self.filters)],
            "group_by": list(self.group_by),
            "order_by": [o.to_dict() for o in self.order_by],
            "limit": self.limit,
            "tables": list(self.tables),
            "joins": [j.to_dict() for j in self.joins],
        }


@dataclass(frozen=True)
class AppRules:
    """Per-application evaluation knobs.

    `column_mappings` keys and values are canonical refs; `benign_filters`
    are pre-parsed triples; `ignore_filters` are canonical column refs.
    `source` keeps the raw profile dict for display in prompts.
    """

    column_mappings: Mapping[str, str] = field(default_factory=dict)
    benign_filters: frozenset = frozenset()
    ignore_filters: frozenset = frozenset()
    source: Optional[dict] = None

    def __post_init__(self):
        folded = [canonical_ref(k) for k in self.column_mappings]
        if len(set(folded)) != len(folded):
            raise ValueError("column_mappings keys collide after case-folding")
        if any(k != canonical_ref(k) for k in self.column_mappings):
            raise ValueError("column_mappings keys must be canonical refs")

    def map_column(self, ref: str) -> str:
        return self.column_mappings.get(ref, ref)

    def to_dict(self) -> dict:
        if self.source is not None:
            return dict(self.source)
        return {
            "column_mappings": dict(self.column_mappings),
            "benign_filters": [f.to_dict() for f in sorted_filters(self.benign_filters)],
            "ignore_filters": sorted(self.ignore_filters),
        }


EMPTY_RULES = AppRules()


@dataclass(frozen=True)
class EvalInstance:
    user_question: str
    sql: str
    enriched_question: Optional[str] = None
    rules: AppRules = EMPTY_RULES


def validate_instance(inst: EvalInstance) -> None:
    """Reject instances that cannot be evaluated at all."""
    if not inst.user_question or not inst.user_question.strip():
        raise EmptyInput("user_question is blank")
    if not inst.sql or not inst.sql.strip():
        raise EmptyInput("sql is blank")


@dataclass(frozen=True)
class NormalizationAnnotation:
    """A production-pattern classification attached to one SQL construct.

    Annotations never mutate the parsed spec; `exempt` marks constructs
    that downstream alignment and the judge should not penalize.
    """

    rule_id: RuleId
    target: str
    exempt: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id.value,
            "target": self.target,
            "exempt": self.exempt,
            "note": self.note,
        }


@dataclass(frozen=True)
class AlignmentRecord:
    """Outcome of matching question requirements against the SQL spec."""

    status: FilterStatus
    matched: frozenset = frozenset()
    missing: frozenset = frozenset()
    mismatched: frozenset = frozenset()
    mismatched_actual: frozenset = frozenset()  # sql-side counterparts
    extra: frozenset = frozenset()
    extras_all_benign: bool = False
    projection_match: bool = True
    aggregation_match: bool = True
    grouping_match: bool = True
    rule_firings: tuple = ()

    def __post_init__(self):
        s = self.status
        if s is FilterStatus.FULLY_APPLIED:
            if self.missing or self.mismatched or self.extra:
                raise InternalInvariantViolation("fully_applied with leftover sets")
        elif s is FilterStatus.FULLY_APPLIED_WITH_EXTRAS:
            if self.missing or self.mismatched:
                raise InternalInvariantViolation("with_extras but required filters unmet")
            if not self.extra:
                raise InternalInvariantViolation("with_extras but no extras")
        elif s is FilterStatus.NOT_APPLIED:
            if self.matched:
                raise InternalInvariantViolation("not_applied with matched filters")
            if not (self.missing or self.mismatched):
                raise InternalInvariantViolation("not_applied without required filters")
        if (self.matched & self.missing) or (self.matched & self.mismatched) \
                or (self.missing & self.mismatched):
            raise InternalInvariantViolation("required-side partitions overlap")

    def required(self) -> frozenset:
        return self.matched | self.missing | self.mismatched

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "matched": [f.to_dict() for f in sorted_filters(self.matched)],
            "missing": [f.to_dict() for f in sorted_filters(self.missing)],
            "mismatched": [f.to_dict() for f in sorted_filters(self.mismatched)],
            "mismatched_actual": [f.to_dict()
                                  for f in sorted_filters(self.mismatched_actual)],
            "extra": [f.to_dict() for f in sorted_filters(self.extra)],
            "extras_all_benign": self.extras_all_benign,
            "projection_match": self.projection_match,
            "aggregation_match": self.aggregation_match,
            "grouping_match": self.grouping_match,
            "rule_firings": [a.to_dict() for a in self.rule_firings],
        }


@dataclass(frozen=True)
class JudgeOutput:
    """Parsed judge reply. `filters_applied_status` only appears in
    judge-only mode, where no deterministic alignment exists."""

    verdict: Verdict
    confidence: float
    rationale: str = ""
    filters_applied_status: Optional[FilterStatus] = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = {
            "verdict": self.verdict.value,
            "confidence": self.confidence,
            "rationale": self.rationale,
        }
        if self.filters_applied_status is not None:
            d["filters_applied_status"] = self.filters_applied_status.value
        return d


@dataclass(frozen=True)
class ScoreBreakdown:
    filter_points: int
    verdict_points: int
    leniency: int
    base: int
    multiplier: float
    phi: float
    tier: Tier

    def to_dict(self) -> dict:
        return {
            "filter_points": self.filter_points,
            "verdict_points": self.verdict_points,
            "leniency": self.leniency,
            "base": self.base,
            "multiplier": self.multiplier,
            "phi": self.phi,
            "tier": self.tier.value,
        }


def _filter_sort_key(f: FilterTriple):
    return (f.lhs, f.op.value, repr(f.rhs))


def sorted_filters(filters) -> list:
    """Deterministic order for serialization; set iteration order is not."""
    return sorted(filters, key=_filter_sort_key)


def _sorted_aggs(aggs) -> list:
    return sorted(aggs, key=lambda a: a.canonical)
