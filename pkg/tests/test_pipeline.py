import json

import pytest

from conftest import SQL_REQUIRED_GROUP_BY, SQL_SAFETY_LIMIT
from stef.errors import EmptyInput, JudgeUnavailable, MalformedJudgeOutput
from stef.judge import StubJudge, load_template
from stef.model import (
    EvalInstance,
    EvalMode,
    FilterStatus,
    JudgeOutput,
    Verdict,
)
from stef.pipeline import (
    BatchSummary,
    Outcome,
    evaluate,
    evaluate_batch,
    summarize,
)
from stef.errors import TransportError

ANCHOR_QUESTION = "Total spend per country for China in 2023"

FULL_PATTERN = EvalInstance(
    user_question=ANCHOR_QUESTION,
    sql=SQL_SAFETY_LIMIT.replace("WHERE Country ILIKE 'China'",
                                 "WHERE Country ILIKE 'China' AND Year = 2023"),
)

WINDOWED = EvalInstance(
    user_question="running total of spend",
    sql="SELECT SUM(Spend) OVER (ORDER BY Year) FROM t",
)


def test_full_pattern_scores_100():
    report = evaluate(FULL_PATTERN, instance_id="anchor")
    assert report.mode is EvalMode.FULL
    assert report.score.phi == 100.0
    assert report.alignment.status is FilterStatus.FULLY_APPLIED
    assert report.judge.verdict is Verdict.CORRECT
    assert report.instance_id == "anchor"


def test_unsupported_construct_routes_to_judge_only():
    report = evaluate(WINDOWED)
    assert report.mode is EvalMode.JUDGE_ONLY
    assert report.sql_spec is None
    assert report.alignment is None
    # stub fallback row: potentially incorrect at 0.70, partial status
    assert report.judge.verdict is Verdict.POTENTIALLY_INCORRECT
    assert report.score.phi == 40.0


def test_missing_year_scores_40():
    # the sql satisfies the country filter but never mentions the year
    inst = EvalInstance(user_question=ANCHOR_QUESTION,
                        sql=SQL_REQUIRED_GROUP_BY)
    report = evaluate(inst)
    assert report.alignment.status is FilterStatus.PARTIALLY_APPLIED
    assert report.judge.verdict is Verdict.POTENTIALLY_INCORRECT
    assert report.score.phi == 40.0


def test_blank_sql_rejected():
    with pytest.raises(EmptyInput):
        evaluate(EvalInstance(user_question="q", sql="   "))


def test_timings_cover_all_full_stages():
    report = evaluate(FULL_PATTERN)
    assert set(report.timings) == {"validate", "extract_question",
                                   "extract_sql", "normalize", "align",
                                   "render", "judge", "score"}
    assert all(v >= 0 for v in report.timings.values())


def test_judge_only_skips_alignment_timings():
    report = evaluate(WINDOWED)
    assert "align" not in report.timings
    assert "normalize" not in report.timings


def test_merge_conflict_is_flagged():
    inst = EvalInstance(
        user_question="total spend per country for China in 2022",
        enriched_question="total spend per country for China in 2023",
        sql=FULL_PATTERN.sql)
    report = evaluate(inst)
    assert any("question merge" in f for f in report.flags)
    # enriched side won, so 2023 is the requirement and the sql satisfies it
    assert report.alignment.status is FilterStatus.FULLY_APPLIED


class _FixedJudge:
    consumes = "record"

    def __init__(self, out):
        self.out = out

    def evaluate(self, record):
        return self.out


def test_disagreement_is_flagged_not_overridden():
    inst = EvalInstance(user_question=ANCHOR_QUESTION, sql="SELECT Spend FROM t")
    judge = _FixedJudge(JudgeOutput(Verdict.CORRECT, 0.95, rationale="sure"))
    report = evaluate(inst, judge=judge)
    assert report.alignment.status is FilterStatus.NOT_APPLIED
    assert report.judge.verdict is Verdict.CORRECT  # kept as reported
    assert any("disagrees" in f for f in report.flags)
    assert report.score.phi == 50.0  # 0 filters + 5 verdict, gamma tier 1.0


class _DownJudge:
    consumes = "bundle"

    def evaluate(self, bundle):
        raise TransportError("endpoint is gone")


def test_remote_failure_becomes_judge_unavailable():
    with pytest.raises(JudgeUnavailable):
        evaluate(FULL_PATTERN, judge=_DownJudge())


class _ForgetfulJudge:
    consumes = "record"

    def evaluate(self, record):
        return JudgeOutput(Verdict.CORRECT, 0.9)  # no filters_applied_status


def test_judge_only_requires_reported_status():
    with pytest.raises(MalformedJudgeOutput):
        evaluate(WINDOWED, judge=_ForgetfulJudge())


def test_report_dict_shape():
    d = evaluate(FULL_PATTERN, instance_id="x1").to_dict()
    assert d["id"] == "x1"
    assert d["mode"] == "full"
    assert d["score"]["phi"] == 100.0
    assert d["template_id"].startswith("judge_template@")
    json.dumps(d)  # must be serializable as-is


# ---- batch ------------------------------------------------------------------

def _jobs(n):
    return [(f"q{i}", FULL_PATTERN) for i in range(n)]


def test_batch_preserves_order_at_any_parallelism():
    jobs = [(f"id{i}", EvalInstance(user_question=ANCHOR_QUESTION,
                                    sql=SQL_REQUIRED_GROUP_BY))
            for i in range(20)]
    for parallelism in (1, 3, 8):
        outcomes, _ = evaluate_batch(jobs, parallelism=parallelism)
        assert [o.instance_id for o in outcomes] == [f"id{i}" for i in range(20)]


def test_batch_isolates_instance_errors():
    jobs = [("good", FULL_PATTERN),
            ("bad", EvalInstance(user_question="q", sql="SELECT FROM")),
            ("also-good", FULL_PATTERN)]
    outcomes, summary = evaluate_batch(jobs)
    assert outcomes[0].scored and outcomes[2].scored
    assert not outcomes[1].scored
    assert outcomes[1].error_type == "ParseError"
    assert summary.scored == 2
    assert summary.coverage == pytest.approx(2 / 3)


def test_batch_accepts_prefailed_jobs():
    jobs = [("line-3", ValueError("not json")), ("ok", FULL_PATTERN)]
    outcomes, summary = evaluate_batch(jobs)
    assert outcomes[0].error_type == "ValueError"
    assert summary.instances == 2 and summary.scored == 1


def test_batch_determinism_with_stub():
    jobs = [(f"q{i}", EvalInstance(
        user_question=ANCHOR_QUESTION,
        sql=SQL_REQUIRED_GROUP_BY if i % 2 else SQL_SAFETY_LIMIT))
        for i in range(30)]
    a, _ = evaluate_batch(jobs, parallelism=6)
    b, _ = evaluate_batch(jobs, parallelism=2)

    def strip(outcome):
        d = outcome.to_dict()
        d.pop("timings_ms", None)
        return json.dumps(d, sort_keys=True)

    assert [strip(o) for o in a] == [strip(o) for o in b]


def test_summary_of_constant_batch():
    outcomes, summary = evaluate_batch(_jobs(3))
    assert summary.mean_phi == 100.0
    assert summary.p90_phi == 100.0
    assert summary.coverage == 1.0
    assert summary.tier_counts == {"excellent": 3}
    assert summary.verdict_counts == {"correct": 3}
    assert summary.status_counts == {"fully_applied": 3}


def test_summary_mean_of_mixed_batch():
    jobs = [
        ("a", FULL_PATTERN),  # scores 100
        ("b", EvalInstance(user_question=ANCHOR_QUESTION,
                           sql=SQL_REQUIRED_GROUP_BY)),  # misses year, 40
    ]
    outcomes, summary = evaluate_batch(jobs)
    phis = sorted(o.report.score.phi for o in outcomes)
    assert phis == [40.0, 100.0]
    assert summary.mean_phi == 70.0


def test_summary_empty_batch():
    outcomes, summary = evaluate_batch([])
    assert summary.mean_phi is None and summary.p90_phi is None
    assert summary.coverage == 1.0


def test_summary_serializes():
    _, summary = evaluate_batch(_jobs(2))
    d = summary.to_dict()
    assert d["coverage"] == 1.0
    json.dumps(d)


def test_p90_nearest_rank_in_summary():
    # ten distinct scores; nearest-rank p90 of n=10 is the 9th sorted value
    jobs = [(f"hi{i}", FULL_PATTERN) for i in range(9)]
    jobs.append(("lo", EvalInstance(user_question=ANCHOR_QUESTION,
                                    sql=SQL_REQUIRED_GROUP_BY)))
    _, summary = evaluate_batch(jobs)
    assert summary.p90_phi == 100.0
