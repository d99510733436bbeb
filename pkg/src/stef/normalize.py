"""Production normalization rules.

Four rules annotate structural SQL idioms that a naive comparison against
the question would flag as errors: the GROUP BY a mixed SELECT list forces,
grouping on a column the WHERE clause pins to one value, a default ORDER BY
the agent added for presentation, and a high LIMIT acting as a row-count
guardrail. Annotations never mutate the spec; the aligner and the judge
prompt consume them.
"""

from dataclasses import dataclass
from typing import List, Optional

from .errors import ConfigError
from .model import (
    FilterOp,
    NormalizationAnnotation,
    QuestionSpec,
    RuleId,
    SqlSpec,
)

_CONSTANT_OPS = (FilterOp.EQ, FilterOp.LIKE, FilterOp.ILIKE)


@dataclass(frozen=True)
class NormalizerConfig:
    lambda_min: int = 1000

    def __post_init__(self):
        if self.lambda_min < 1:
            raise ConfigError("lambda_min must be at least 1")


DEFAULT_CONFIG = NormalizerConfig()


def _pins_to_constant(f) -> bool:
    if f.op not in _CONSTANT_OPS or not f.is_literal_rhs or f.rhs is None:
        return False
    if f.op in (FilterOp.LIKE, FilterOp.ILIKE):
        # a wildcarded pattern matches many values, not one
        pattern = str(f.rhs)
        return "%" not in pattern and "_" not in pattern
    return True


def rule1_required_group_by(spec: SqlSpec) -> Optional[NormalizationAnnotation]:
    """Exempt a GROUP BY that the mixed SELECT list makes mandatory."""
    p_agg = [p for p in spec.projections if p.aggregation is not None]
    p_non_agg = [p for p in spec.projections if p.aggregation is None]
    if not p_agg or not p_non_agg:
        return None
    grouped = set(spec.group_by)
    if not all(p.expr in grouped for p in p_non_agg):
        return None
    return NormalizationAnnotation(
        RuleId.REQUIRED_GROUP_BY,
        target=", ".join(p.expr for p in p_non_agg),
        exempt=True,
        note="select list mixes aggregates and plain columns",
    )


def rule2_benign_group_by(spec: SqlSpec) -> List[NormalizationAnnotation]:
    """Exempt grouping columns the WHERE clause constrains to one value."""
    out = []
    for g in spec.group_by:
        if any(f.lhs == g and _pins_to_constant(f) for f in spec.filters):
            out.append(NormalizationAnnotation(
                RuleId.BENIGN_GROUP_BY,
                target=g,
                exempt=True,
                note=f"{g} is pinned to a constant, grouping on it is inert",
            ))
    return out


def rule3_sensible_order_by(qspec: QuestionSpec,
                            spec: SqlSpec) -> List[NormalizationAnnotation]:
    """Exempt a default ORDER BY when the question never asked for ordering.

    DESC on an aggregate reads as highest-first presentation; ASC on a
    grouping dimension reads as alphabetical or chronological listing.
    Anything else stays visible to the judge.
    """
    if qspec.explicit_order:
        return []
    agg_names = {a.canonical for a in spec.aggregations}
    grouped = set(spec.group_by)
    out = []
    for item in spec.order_by:
        on_aggregate = item.expr in agg_names
        on_dimension = item.expr in grouped
        if not on_aggregate and not on_dimension:
            continue
        if (on_aggregate and item.desc) or (on_dimension and not item.desc):
            direction = "desc" if item.desc else "asc"
            out.append(NormalizationAnnotation(
                RuleId.SENSIBLE_ORDER_BY,
                target=f"{item.expr} {direction}",
                exempt=True,
                note="presentation default, not an answer to an ordering request",
            ))
    return out


def rule4_safety_limit(qspec: QuestionSpec, spec: SqlSpec,
                       cfg: NormalizerConfig = DEFAULT_CONFIG,
                       ) -> Optional[NormalizationAnnotation]:
    """Classify a LIMIT with no top-k request behind it."""
    if spec.limit is None or qspec.topk_request is not None:
        return None
    if spec.limit >= cfg.lambda_min:
        return NormalizationAnnotation(
            RuleId.SAFETY_LIMIT,
            target=str(spec.limit),
            exempt=True,
            note="high-cardinality guardrail, not a top-k claim",
        )
    return NormalizationAnnotation(
        RuleId.SAFETY_LIMIT,
        target=str(spec.limit),
        exempt=False,
        note="potential unintended restriction",
    )


def apply_all(qspec: QuestionSpec, spec: SqlSpec,
              cfg: NormalizerConfig = DEFAULT_CONFIG,
              ) -> List[NormalizationAnnotation]:
    """Run all four rules and concatenate their annotations in rule order."""
    out: List[NormalizationAnnotation] = []
    r1 = rule1_required_group_by(spec)
    if r1:
        out.append(r1)
    out.extend(rule2_benign_group_by(spec))
    out.extend(rule3_sensible_order_by(qspec, spec))
    r4 = rule4_safety_limit(qspec, spec, cfg)
    if r4:
        out.append(r4)
    return out
