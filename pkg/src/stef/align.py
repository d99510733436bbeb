"""Pairwise alignment of the question spec against the SQL spec.

Produces the AlignmentRecord the judge and the scorer both consume: a
four-class filter status, the required-side partition into matched,
missing, and mismatched, the SQL-side extras, and three binary dimension
signals for projections, aggregations, and grouping.
"""

from typing import FrozenSet, Iterable, Optional, Sequence, Tuple

from .model import (
    AlignmentRecord,
    AppRules,
    EMPTY_RULES,
    FilterOp,
    FilterStatus,
    FilterTriple,
    NormalizationAnnotation,
    QuestionSpec,
    RuleId,
    SqlSpec,
    sorted_filters,
)

_LIKE_OPS = (FilterOp.LIKE, FilterOp.ILIKE)


def _norm_scalar(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        s = " ".join(v.split()).casefold()
        try:
            return float(s)  # "2023" and 2023 are the same value
        except ValueError:
            return s
    return v


def _norm_rhs(v):
    if isinstance(v, tuple):
        return tuple(_norm_scalar(x) for x in v)
    return _norm_scalar(v)


def _wildcarded(f: FilterTriple) -> bool:
    return f.op in _LIKE_OPS and isinstance(f.rhs, str) \
        and ("%" in f.rhs or "_" in f.rhs)


def _ops_compatible(a: FilterTriple, b: FilterTriple) -> bool:
    if a.op is b.op:
        return True
    pair = {a.op, b.op}
    if pair <= set(_LIKE_OPS):
        return True
    # EQ and a non-wildcarded pattern ask for the same rows
    if FilterOp.EQ in pair and pair & set(_LIKE_OPS):
        patterned = a if a.op in _LIKE_OPS else b
        return not _wildcarded(patterned)
    return False


def filters_match(a: FilterTriple, b: FilterTriple) -> bool:
    if a.lhs != b.lhs:
        return False
    if a.op is FilterOp.COMPLEX or b.op is FilterOp.COMPLEX:
        return a.op is b.op  # lhs holds the whole condition text
    if not _ops_compatible(a, b):
        return False
    if a.op in (FilterOp.IS_NULL, FilterOp.IS_NOT_NULL):
        return True
    return _norm_rhs(a.rhs) == _norm_rhs(b.rhs)


def _drop_ignored(filters: Iterable[FilterTriple],
                  rules: AppRules) -> FrozenSet[FilterTriple]:
    ignored = set(rules.ignore_filters)
    ignored |= {rules.map_column(name) for name in rules.ignore_filters}
    return frozenset(f for f in filters if f.lhs not in ignored)


def _is_benign(extra: FilterTriple, rules: AppRules) -> bool:
    return any(filters_match(extra, b) for b in rules.benign_filters)


def _partition(qspec: QuestionSpec, spec: SqlSpec, rules: AppRules):
    # sorted iteration keeps counterpart choice stable across processes
    required = sorted_filters(_drop_ignored(qspec.filters, rules))
    actual = sorted_filters(_drop_ignored(spec.filters, rules))

    matched, missing, mismatched = set(), set(), set()
    consumed, counterparts = set(), set()
    for r in required:
        hit = next((s for s in actual if filters_match(r, s)), None)
        if hit is not None:
            matched.add(r)
            consumed.add(hit)
            continue
        same_lhs = {s for s in actual if s.lhs == r.lhs}
        if same_lhs:
            mismatched.add(r)
            consumed |= same_lhs  # wrong-valued counterparts are not extras
            counterparts |= same_lhs
        else:
            missing.add(r)

    extra = frozenset(set(actual) - consumed)
    extras_all_benign = all(_is_benign(e, rules) for e in extra)

    if not missing and not mismatched:
        # covers the zero-required question: vacuously fully applied
        status = FilterStatus.FULLY_APPLIED if not extra \
            else FilterStatus.FULLY_APPLIED_WITH_EXTRAS
    elif matched:
        status = FilterStatus.PARTIALLY_APPLIED
    else:
        status = FilterStatus.NOT_APPLIED

    return (status, frozenset(matched), frozenset(missing),
            frozenset(mismatched), frozenset(counterparts - matched),
            extra, extras_all_benign)


def classify_filters(
    qspec: QuestionSpec,
    spec: SqlSpec,
    rules: AppRules = EMPTY_RULES,
) -> Tuple[FilterStatus, FrozenSet[FilterTriple], FrozenSet[FilterTriple],
           FrozenSet[FilterTriple], FrozenSet[FilterTriple], bool]:
    """Partition required filters and classify the four-way status.

    Returns (status, matched, missing, mismatched, extra, extras_all_benign).
    Filters on ignored dimensions are removed from both sides before
    anything is compared.
    """
    status, matched, missing, mismatched, _, extra, benign = \
        _partition(qspec, spec, rules)
    return status, matched, missing, mismatched, extra, benign


def _exempt_grouping_columns(
        annotations: Sequence[NormalizationAnnotation]) -> set:
    exempt = set()
    for a in annotations:
        if not a.exempt:
            continue
        if a.rule_id is RuleId.BENIGN_GROUP_BY:
            exempt.add(a.target)
        elif a.rule_id is RuleId.REQUIRED_GROUP_BY:
            exempt |= {c.strip() for c in a.target.split(",")}
    return exempt


def align_dimensions(
    qspec: QuestionSpec,
    spec: SqlSpec,
    annotations: Sequence[NormalizationAnnotation] = (),
) -> Tuple[bool, bool, bool]:
    """Binary match signals for projections, aggregations, and grouping."""
    has_star = any("*" in p.names for p in spec.projections)
    projection_match = has_star or all(
        any(o in p.names for p in spec.projections) for o in qspec.outputs)

    aggregation_match = qspec.aggregations <= spec.aggregations

    grouped = set(spec.group_by)
    if qspec.group_by <= grouped:
        surplus = grouped - qspec.group_by
        grouping_match = surplus <= _exempt_grouping_columns(annotations)
    else:
        grouping_match = False

    return projection_match, aggregation_match, grouping_match


def build_alignment_record(
    qspec: QuestionSpec,
    spec: SqlSpec,
    rules: AppRules = EMPTY_RULES,
    annotations: Sequence[NormalizationAnnotation] = (),
) -> AlignmentRecord:
    status, matched, missing, mismatched, counterparts, extra, benign = \
        _partition(qspec, spec, rules)
    projection_match, aggregation_match, grouping_match = \
        align_dimensions(qspec, spec, annotations)
    return AlignmentRecord(
        status=status,
        matched=matched,
        missing=missing,
        mismatched=mismatched,
        mismatched_actual=counterparts,
        extra=extra,
        extras_all_benign=benign,
        projection_match=projection_match,
        aggregation_match=aggregation_match,
        grouping_match=grouping_match,
        rule_firings=tuple(annotations),
    )
