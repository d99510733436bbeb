import random

import pytest

from conftest import SQL_REQUIRED_GROUP_BY, SQL_SAFETY_LIMIT
from stef.align import (
    align_dimensions,
    build_alignment_record,
    classify_filters,
    filters_match,
)
from stef.model import (
    AggFunc,
    AggregationSpec,
    AppRules,
    EMPTY_RULES,
    FilterOp,
    FilterStatus,
    FilterTriple,
    QuestionSpec,
    RuleId,
    SqlSpec,
)
from stef.normalize import apply_all
from stef.question_extract import extract_question_spec
from stef.sql_extract import extract_sql_spec, normalize_filter


def _eq(lhs, rhs):
    return FilterTriple(lhs, FilterOp.EQ, rhs)


def qspec_with(*filters, **kw):
    return QuestionSpec(filters=frozenset(filters), **kw)


def sqlspec_with(*filters):
    return SqlSpec(filters=frozenset(filters))


# ---- match predicate -------------------------------------------------------

@pytest.mark.parametrize("a,b,want", [
    (_eq("country", "china"), _eq("country", "china"), True),
    (_eq("country", "china"), _eq("country", "China "), True),
    (_eq("country", "china"), _eq("region", "china"), False),
    (_eq("year", 2023), _eq("year", "2023"), True),
    (_eq("year", 2023), _eq("year", 2024), False),
    (_eq("spend", 1.0), _eq("spend", 1), True),
    (_eq("country", "china"), FilterTriple("country", FilterOp.ILIKE, "china"), True),
    (_eq("country", "china"), FilterTriple("country", FilterOp.LIKE, "ch%"), False),
    (FilterTriple("country", FilterOp.LIKE, "ch%"),
     FilterTriple("country", FilterOp.ILIKE, "ch%"), True),
    (FilterTriple("year", FilterOp.GTE, 2020),
     FilterTriple("year", FilterOp.GTE, 2020), True),
    (FilterTriple("year", FilterOp.GTE, 2020),
     FilterTriple("year", FilterOp.GT, 2020), False),
    (FilterTriple("year", FilterOp.BETWEEN, (2020, 2023)),
     FilterTriple("year", FilterOp.BETWEEN, (2020, 2023)), True),
    (FilterTriple("status", FilterOp.IN, ("a", "b")),
     FilterTriple("status", FilterOp.IN, ("a", "b")), True),
    (FilterTriple("status", FilterOp.IN, ("a", "b")),
     FilterTriple("status", FilterOp.IN, ("a", "c")), False),
    (FilterTriple("deleted", FilterOp.IS_NULL),
     FilterTriple("deleted", FilterOp.IS_NULL), True),
    (FilterTriple("x > y + 1", FilterOp.COMPLEX),
     FilterTriple("x > y + 1", FilterOp.COMPLEX), True),
    (FilterTriple("x > y + 1", FilterOp.COMPLEX), _eq("x > y + 1", "z"), False),
])
def test_filters_match(a, b, want):
    assert filters_match(a, b) is want
    assert filters_match(b, a) is want


# ---- status classification -------------------------------------------------

def test_fully_applied():
    status, matched, missing, mismatched, extra, _ = classify_filters(
        qspec_with(_eq("country", "china")),
        sqlspec_with(_eq("country", "china")))
    assert status is FilterStatus.FULLY_APPLIED
    assert matched and not missing and not mismatched and not extra


def test_with_extras_and_benign_list(spend_rules):
    status, *_, extra, benign = classify_filters(
        qspec_with(_eq("country", "china")),
        sqlspec_with(_eq("country", "china"), _eq("status", "active")),
        spend_rules)
    assert status is FilterStatus.FULLY_APPLIED_WITH_EXTRAS
    assert extra == frozenset({_eq("status", "active")})
    assert benign


def test_with_extras_not_benign():
    status, *_, benign = classify_filters(
        qspec_with(_eq("country", "china")),
        sqlspec_with(_eq("country", "china"), _eq("region", "emea")))
    assert status is FilterStatus.FULLY_APPLIED_WITH_EXTRAS
    assert not benign


def test_partially_applied_missing():
    status, matched, missing, *_ = classify_filters(
        qspec_with(_eq("country", "china"), _eq("year", 2023)),
        sqlspec_with(_eq("country", "china")))
    assert status is FilterStatus.PARTIALLY_APPLIED
    assert missing == frozenset({_eq("year", 2023)})


def test_partially_applied_mismatched_consumes_counterpart():
    status, matched, missing, mismatched, extra, _ = classify_filters(
        qspec_with(_eq("country", "china"), _eq("year", 2023)),
        sqlspec_with(_eq("country", "china"), _eq("year", 2024)))
    assert status is FilterStatus.PARTIALLY_APPLIED
    assert mismatched == frozenset({_eq("year", 2023)})
    assert extra == frozenset()  # the wrong-valued year is not an extra


def test_not_applied():
    status, matched, *_ = classify_filters(
        qspec_with(_eq("year", 2023)), sqlspec_with())
    assert status is FilterStatus.NOT_APPLIED
    assert not matched


def test_zero_required_no_extras():
    status, *_ = classify_filters(qspec_with(), sqlspec_with())
    assert status is FilterStatus.FULLY_APPLIED


def test_zero_required_benign_extra(spend_rules):
    status, *_, benign = classify_filters(
        qspec_with(), sqlspec_with(_eq("is_deleted", 0)), spend_rules)
    assert status is FilterStatus.FULLY_APPLIED_WITH_EXTRAS
    assert benign


def test_zero_required_non_benign_extra():
    status, *_, benign = classify_filters(
        qspec_with(), sqlspec_with(_eq("region", "emea")))
    assert status is FilterStatus.FULLY_APPLIED_WITH_EXTRAS
    assert not benign


def test_ignored_dimension_removed_from_both_sides(spend_rules):
    status, *_ , extra, _ = classify_filters(
        qspec_with(_eq("portfolio", "alpha")),
        sqlspec_with(_eq("tenantid", "t1")),
        spend_rules)
    assert status is FilterStatus.FULLY_APPLIED
    assert not extra


# ---- dimension alignment ---------------------------------------------------

def test_dimensions_on_anchor_query():
    qspec = extract_question_spec("Total spend per country for China in 2023")
    spec = extract_sql_spec(SQL_REQUIRED_GROUP_BY)
    anns = apply_all(qspec, spec)
    proj, agg, grp = align_dimensions(qspec, spec, anns)
    assert agg
    assert grp  # extra Year grouping is exempt under rule 1
    assert proj


def test_empty_question_matches_vacuously():
    spec = extract_sql_spec("SELECT a, b FROM t")
    assert align_dimensions(QuestionSpec(), spec) == (True, True, True)


def test_grouping_subset_violation():
    qspec = QuestionSpec(group_by=frozenset({"quarter"}))
    spec = extract_sql_spec("SELECT Year, SUM(x) AS s FROM t GROUP BY Year")
    _, _, grp = align_dimensions(qspec, spec)
    assert not grp


def test_unexempt_extra_grouping_falsifies():
    qspec = extract_question_spec("total spend for China")
    spec = extract_sql_spec(
        "SELECT Region, SUM(Spend) FROM t WHERE Country = 'China' GROUP BY Region, Quarter")
    # Quarter is neither selected nor pinned; only Region is exempt via rule 1
    anns = apply_all(qspec, spec)
    _, _, grp = align_dimensions(qspec, spec, anns)
    assert not grp


def test_star_projection_matches_any_output():
    qspec = QuestionSpec(outputs=frozenset({"order"}))
    spec = extract_sql_spec("SELECT * FROM orders")
    proj, _, _ = align_dimensions(qspec, spec)
    assert proj


def test_aggregation_mismatch():
    qspec = QuestionSpec(aggregations=frozenset(
        {AggregationSpec(AggFunc.AVG, "spend")}))
    spec = extract_sql_spec("SELECT SUM(Spend) FROM t")
    _, agg, _ = align_dimensions(qspec, spec)
    assert not agg


def test_alias_satisfies_projection():
    qspec = QuestionSpec(outputs=frozenset({"totalspend"}))
    spec = extract_sql_spec("SELECT SUM(Spend) AS TotalSpend FROM t")
    proj, _, _ = align_dimensions(qspec, spec)
    assert proj


# ---- full record -----------------------------------------------------------

def test_record_end_to_end_all_rules(spend_rules):
    qspec = extract_question_spec("Total spend per country for China in 2023")
    spec = extract_sql_spec(
        SQL_SAFETY_LIMIT.replace("WHERE Country ILIKE 'China'",
                                 "WHERE Country ILIKE 'China' AND Year = 2023"))
    anns = apply_all(qspec, spec)
    record = build_alignment_record(qspec, spec, spend_rules, anns)
    assert record.status is FilterStatus.FULLY_APPLIED
    assert record.projection_match and record.aggregation_match \
        and record.grouping_match
    # rule 2 fires per pinned column (country and year), so five total
    assert len(record.rule_firings) == 5
    assert {a.rule_id for a in record.rule_firings} == set(RuleId)
    assert all(a.exempt for a in record.rule_firings)


def test_record_not_applied_case():
    record = build_alignment_record(
        qspec_with(_eq("year", 2023)), sqlspec_with())
    assert record.status is FilterStatus.NOT_APPLIED
    assert record.matched == frozenset()


# ---- properties ------------------------------------------------------------

_COLUMNS = ["country", "year", "status", "region", "spend", "quarter"]
_VALUES = ["china", "active", 2023, 2024, "emea", 7]


def _random_triple(rng):
    return _eq(rng.choice(_COLUMNS), rng.choice(_VALUES))


def _random_filterset(rng, max_n=4):
    return frozenset(_random_triple(rng) for _ in range(rng.randint(0, max_n)))


def test_partition_and_totality_properties():
    rng = random.Random(90125)
    seen = set()
    for _ in range(1000):
        q, s = _random_filterset(rng), _random_filterset(rng)
        status, matched, missing, mismatched, extra, _ = classify_filters(
            QuestionSpec(filters=q), SqlSpec(filters=s))
        seen.add(status)
        assert matched | missing | mismatched == q
        assert not (matched & missing or matched & mismatched
                    or missing & mismatched)
        assert extra <= s
    assert seen == set(FilterStatus)  # all four classes are reachable


def test_benign_monotonicity_property():
    rng = random.Random(5150)
    order = [FilterStatus.NOT_APPLIED, FilterStatus.PARTIALLY_APPLIED,
             FilterStatus.FULLY_APPLIED_WITH_EXTRAS, FilterStatus.FULLY_APPLIED]
    for _ in range(500):
        q, s = _random_filterset(rng), _random_filterset(rng)
        small = AppRules(benign_filters=frozenset({_random_triple(rng)}))
        big = AppRules(benign_filters=small.benign_filters
                       | {_random_triple(rng), _random_triple(rng)})
        st_small = classify_filters(QuestionSpec(filters=q), SqlSpec(filters=s), small)
        st_big = classify_filters(QuestionSpec(filters=q), SqlSpec(filters=s), big)
        assert order.index(st_big[0]) >= order.index(st_small[0])
        if st_small[-1]:
            assert st_big[-1]  # enlarging the benign list never flips it off


def test_ignore_symmetry_property():
    rng = random.Random(1984)
    rules = AppRules(ignore_filters=frozenset({"tenantid"}))
    for _ in range(500):
        q, s = _random_filterset(rng), _random_filterset(rng)
        base = classify_filters(QuestionSpec(filters=q), SqlSpec(filters=s), rules)
        noise = _eq("tenantid", rng.choice(_VALUES))
        with_q = classify_filters(
            QuestionSpec(filters=q | {noise}), SqlSpec(filters=s), rules)
        with_s = classify_filters(
            QuestionSpec(filters=q), SqlSpec(filters=s | {noise}), rules)
        assert base == with_q == with_s


def test_normalized_inputs_align_like_raw_equivalents():
    raw = FilterTriple("Country", FilterOp.ILIKE, "China")
    assert filters_match(normalize_filter(raw), _eq("country", "china"))
