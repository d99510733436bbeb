import pytest

from stef.errors import EmptyInput, InternalInvariantViolation
from stef.model import (
    AggFunc,
    AggregationSpec,
    AlignmentRecord,
    AppRules,
    EvalInstance,
    FilterOp,
    FilterStatus,
    FilterTriple,
    JudgeOutput,
    Projection,
    QuestionSpec,
    SqlSpec,
    Verdict,
    canonical_ref,
    validate_instance,
)


@pytest.mark.parametrize("raw,expected", [
    ("Country", "country"),
    ('"Country"', "country"),
    ("spend_table.Country", "country"),
    ('t."Total_Spend"', "totalspend"),
    ("total spend", "totalspend"),
    ("TotalSpendUSD", "totalspendusd"),
    ("*", "*"),
])
def test_canonical_ref(raw, expected):
    assert canonical_ref(raw) == expected


def test_filter_triple_folds_lhs():
    t = FilterTriple("Country", FilterOp.EQ, "China")
    assert t.lhs == "country"
    assert t.rhs == "China"  # rhs folding is normalize_filter's job


def test_filter_triple_rhs_arity():
    with pytest.raises(ValueError):
        FilterTriple("x", FilterOp.IS_NULL, 1)
    with pytest.raises(ValueError):
        FilterTriple("x", FilterOp.IN, ())
    with pytest.raises(ValueError):
        FilterTriple("x", FilterOp.IN, "a")
    with pytest.raises(ValueError):
        FilterTriple("x", FilterOp.BETWEEN, (1,))
    with pytest.raises(ValueError):
        FilterTriple("x", FilterOp.EQ, None)
    FilterTriple("x", FilterOp.IS_NOT_NULL)
    FilterTriple("x", FilterOp.BETWEEN, (1, 2))
    FilterTriple("x", FilterOp.IN, ("a", "b"))


def test_complex_triple_keeps_raw_text():
    t = FilterTriple("a = 1  OR  b = 2", FilterOp.COMPLEX)
    assert t.lhs == "a = 1 OR b = 2"  # whitespace collapsed, case kept
    assert t.rhs is None


def test_column_rhs_is_folded_when_not_literal():
    t = FilterTriple("a.X", FilterOp.EQ, "b.Y", is_literal_rhs=False)
    assert t.lhs == "x"
    assert t.rhs == "y"


def test_aggregation_spec():
    a = AggregationSpec(AggFunc.SUM, "Spend")
    assert a.canonical == "sum(spend)"
    d = AggregationSpec(AggFunc.COUNT, "Cust", distinct=True)
    assert d.canonical == "count(distinct cust)"
    assert AggregationSpec(AggFunc.COUNT, "*").canonical == "count(*)"
    with pytest.raises(ValueError):
        AggregationSpec(AggFunc.SUM, "*")


def test_question_spec_topk_needs_order_or_aggregate():
    QuestionSpec(topk_request=10, explicit_order=True)
    QuestionSpec(topk_request=1,
                 aggregations=frozenset({AggregationSpec(AggFunc.MAX, "spend")}))
    with pytest.raises(ValueError):
        QuestionSpec(topk_request=5)


def test_sql_spec_rejects_unregistered_projected_aggregate():
    agg = AggregationSpec(AggFunc.SUM, "spend")
    proj = Projection(expr="sum(spend)", aggregation=agg, names=frozenset({"sum(spend)"}))
    with pytest.raises(InternalInvariantViolation):
        SqlSpec(projections=(proj,), aggregations=frozenset())
    SqlSpec(projections=(proj,), aggregations=frozenset({agg}))


def test_sql_spec_rejects_aggregate_in_group_by():
    agg = AggregationSpec(AggFunc.SUM, "spend")
    with pytest.raises(InternalInvariantViolation):
        SqlSpec(aggregations=frozenset({agg}), group_by=("sum(spend)",))


def test_app_rules_key_collision():
    with pytest.raises(ValueError):
        AppRules(column_mappings={"region": "a", "Region": "b"})
    with pytest.raises(ValueError):
        AppRules(column_mappings={"Region": "a"})  # not canonical
    AppRules(column_mappings={"region": "regionname"})


def test_validate_instance():
    ok = EvalInstance(user_question="total spend", sql="SELECT 1")
    validate_instance(ok)
    with pytest.raises(EmptyInput):
        validate_instance(EvalInstance(user_question="  ", sql="SELECT 1"))
    with pytest.raises(EmptyInput):
        validate_instance(EvalInstance(user_question="q", sql=""))


def _f(lhs, rhs):
    return FilterTriple(lhs, FilterOp.EQ, rhs)


def test_alignment_record_invariants():
    with pytest.raises(InternalInvariantViolation):
        AlignmentRecord(status=FilterStatus.FULLY_APPLIED,
                        extra=frozenset({_f("a", 1)}))
    with pytest.raises(InternalInvariantViolation):
        AlignmentRecord(status=FilterStatus.FULLY_APPLIED_WITH_EXTRAS)
    with pytest.raises(InternalInvariantViolation):
        AlignmentRecord(status=FilterStatus.NOT_APPLIED,
                        matched=frozenset({_f("a", 1)}),
                        missing=frozenset({_f("b", 2)}))
    with pytest.raises(InternalInvariantViolation):
        AlignmentRecord(status=FilterStatus.PARTIALLY_APPLIED,
                        matched=frozenset({_f("a", 1)}),
                        missing=frozenset({_f("a", 1)}))
    AlignmentRecord(status=FilterStatus.NOT_APPLIED,
                    missing=frozenset({_f("a", 1)}))


def test_judge_output_confidence_range():
    JudgeOutput(Verdict.CORRECT, 0.0)
    JudgeOutput(Verdict.CORRECT, 1.0)
    with pytest.raises(ValueError):
        JudgeOutput(Verdict.CORRECT, 1.2)


def test_serialization_is_sorted():
    spec = QuestionSpec(filters=frozenset({_f("b", 2), _f("a", 1)}))
    d = spec.to_dict()
    assert [f["lhs"] for f in d["filters"]] == ["a", "b"]
