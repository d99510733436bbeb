"""End-to-end evaluation pipeline.

One instance flows validate → extract both specs → normalize → align →
prompt → judge → score. SQL the deterministic parser cannot handle routes
the instance to judge-only mode: the prompt ships without a comparison
record and scoring takes the filter status the judge itself reports.

Batches run on a thread pool with per-instance error isolation; report
order always matches input order.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .align import build_alignment_record
from .errors import (
    JudgeUnavailable,
    MalformedJudgeOutput,
    TransportError,
    UnsupportedConstruct,
)
from .judge import StubJudge, load_template, render_prompt
from .model import (
    AlignmentRecord,
    EvalInstance,
    EvalMode,
    FilterStatus,
    InternalInvariantViolation,
    JudgeOutput,
    QuestionSpec,
    ScoreBreakdown,
    SqlSpec,
    Verdict,
    validate_instance,
)
from .normalize import DEFAULT_CONFIG, NormalizerConfig, apply_all
from .question_extract import extract_question_spec
from .scoring import composite, mean_phi, p90_phi
from .sql_extract import extract_sql_spec


@dataclass(frozen=True)
class EvaluationReport:
    instance_id: str
    question_spec: QuestionSpec
    sql_spec: Optional[SqlSpec]
    alignment: Optional[AlignmentRecord]
    judge: JudgeOutput
    score: ScoreBreakdown
    mode: EvalMode
    template_id: str
    timings: Dict[str, float] = field(default_factory=dict)
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        if (self.mode is EvalMode.JUDGE_ONLY) != (self.sql_spec is None):
            raise InternalInvariantViolation(
                "judge-only mode and a parsed sql spec must exclude each other")

    def to_dict(self) -> dict:
        return {
            "id": self.instance_id,
            "mode": self.mode.value,
            "question_spec": self.question_spec.to_dict(),
            "sql_spec": self.sql_spec.to_dict() if self.sql_spec else None,
            "alignment": self.alignment.to_dict() if self.alignment else None,
            "judge": self.judge.to_dict(),
            "score": self.score.to_dict(),
            "template_id": self.template_id,
            "flags": list(self.flags),
            "timings_ms": {k: round(v, 3) for k, v in sorted(self.timings.items())},
        }


_OPTIMISTIC = (Verdict.CORRECT, Verdict.LIKELY_CORRECT)


def _disagreement_flags(record: Optional[AlignmentRecord],
                        judge_out: JudgeOutput) -> List[str]:
    if record is None:
        return []
    v, s = judge_out.verdict, record.status
    if v in _OPTIMISTIC and s is FilterStatus.NOT_APPLIED:
        return [f"judge verdict {v.value} disagrees with filter alignment {s.value}"]
    if v is Verdict.INCORRECT and s is FilterStatus.FULLY_APPLIED \
            and record.projection_match and record.aggregation_match \
            and record.grouping_match:
        return [f"judge verdict {v.value} disagrees with filter alignment {s.value}"]
    return []


class _Timer:
    def __init__(self):
        self.laps: Dict[str, float] = {}
        self._last = time.perf_counter()

    def lap(self, stage: str) -> None:
        now = time.perf_counter()
        self.laps[stage] = (now - self._last) * 1000.0
        self._last = now


def evaluate(inst: EvalInstance,
             cfg: NormalizerConfig = DEFAULT_CONFIG,
             judge=None,
             template: Optional[Tuple[str, str]] = None,
             instance_id: str = "") -> EvaluationReport:
    """Evaluate one instance; raises on validation, parse, or judge failure.

    `judge` is any object with `consumes` ("record" or "bundle") and an
    `evaluate` method; the stub judge is the default. `template` is a
    (text, template_id) pair from load_template.
    """
    judge = judge if judge is not None else StubJudge()
    template_text, template_id = template if template else load_template()
    timer = _Timer()

    validate_instance(inst)
    timer.lap("validate")

    qspec = extract_question_spec(inst.user_question, inst.enriched_question,
                                  inst.rules)
    timer.lap("extract_question")

    mode = EvalMode.FULL
    sqlspec: Optional[SqlSpec] = None
    record: Optional[AlignmentRecord] = None
    construct = ""
    try:
        sqlspec = extract_sql_spec(inst.sql, inst.rules)
    except UnsupportedConstruct as exc:
        mode = EvalMode.JUDGE_ONLY
        construct = exc.construct
    timer.lap("extract_sql")

    if mode is EvalMode.FULL:
        annotations = apply_all(qspec, sqlspec, cfg)
        timer.lap("normalize")
        record = build_alignment_record(qspec, sqlspec, inst.rules, annotations)
        timer.lap("align")

    bundle = render_prompt(inst, record, template_text, template_id,
                           unsupported_construct=construct)
    timer.lap("render")

    try:
        if getattr(judge, "consumes", "record") == "record":
            judge_out = judge.evaluate(record)
        else:
            judge_out = judge.evaluate(bundle)
    except TransportError as exc:  # timeouts included
        raise JudgeUnavailable(f"judge transport failed: {exc}") from exc
    timer.lap("judge")

    if mode is EvalMode.FULL:
        score = composite(record.status, record.extras_all_benign,
                          judge_out.verdict, judge_out.confidence)
    else:
        status = judge_out.filters_applied_status
        if status is None:
            raise MalformedJudgeOutput(
                "judge omitted filters_applied_status in judge-only mode")
        # no deterministic extras knowledge, so no leniency credit
        score = composite(status, False, judge_out.verdict,
                          judge_out.confidence)
    timer.lap("score")

    flags = [f"question merge: {c}" for c in qspec.conflicts]
    flags += _disagreement_flags(record, judge_out)

    return EvaluationReport(
        instance_id=instance_id,
        question_spec=qspec,
        sql_spec=sqlspec,
        alignment=record,
        judge=judge_out,
        score=score,
        mode=mode,
        template_id=template_id,
        timings=timer.laps,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class Outcome:
    """One batch slot: a report, or the error that took its place."""

    instance_id: str
    report: Optional[EvaluationReport] = None
    error: Optional[str] = None
    error_type: str = ""

    @property
    def scored(self) -> bool:
        return self.report is not None

    def to_dict(self) -> dict:
        if self.report is not None:
            return self.report.to_dict()
        return {"id": self.instance_id,
                "error": {"type": self.error_type, "message": self.error}}


@dataclass(frozen=True)
class BatchSummary:
    instances: int
    scored: int
    mean_phi: Optional[float]
    p90_phi: Optional[float]
    tier_counts: Dict[str, int]
    status_counts: Dict[str, int]
    verdict_counts: Dict[str, int]

    @property
    def coverage(self) -> float:
        return 1.0 if self.instances == 0 else self.scored / self.instances

    def to_dict(self) -> dict:
        return {
            "instances": self.instances,
            "scored": self.scored,
            "coverage": round(self.coverage, 4),
            "mean_phi": self.mean_phi,
            "p90_phi": self.p90_phi,
            "tier_counts": dict(sorted(self.tier_counts.items())),
            "status_counts": dict(sorted(self.status_counts.items())),
            "verdict_counts": dict(sorted(self.verdict_counts.items())),
        }


def summarize(outcomes: Sequence[Outcome]) -> BatchSummary:
    phis = [o.report.score.phi for o in outcomes if o.scored]
    tiers: Dict[str, int] = {}
    statuses: Dict[str, int] = {}
    verdicts: Dict[str, int] = {}
    for o in outcomes:
        if not o.scored:
            continue
        r = o.report
        tiers[r.score.tier.value] = tiers.get(r.score.tier.value, 0) + 1
        if r.alignment is not None:
            status = r.alignment.status
        else:
            status = r.judge.filters_applied_status
        if status is not None:
            statuses[status.value] = statuses.get(status.value, 0) + 1
        v = r.judge.verdict.value
        verdicts[v] = verdicts.get(v, 0) + 1
    return BatchSummary(
        instances=len(outcomes),
        scored=len(phis),
        mean_phi=mean_phi(phis),
        p90_phi=p90_phi(phis),
        tier_counts=tiers,
        status_counts=statuses,
        verdict_counts=verdicts,
    )


Job = Tuple[str, Union[EvalInstance, Exception]]


def evaluate_batch(jobs: Sequence[Job],
                   parallelism: int = 4,
                   cfg: NormalizerConfig = DEFAULT_CONFIG,
                   judge=None,
                   template: Optional[Tuple[str, str]] = None,
                   ) -> Tuple[List[Outcome], BatchSummary]:
    """Evaluate jobs concurrently, yielding outcomes in input order.

    A job pairs an instance id with either an EvalInstance or an exception
    recorded at intake (for example, a line of input that never parsed);
    exception jobs become error outcomes without touching the pipeline.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    judge = judge if judge is not None else StubJudge()
    template = template if template else load_template()

    def run(job: Job) -> Outcome:
        instance_id, payload = job
        if isinstance(payload, Exception):
            return Outcome(instance_id, error=str(payload),
                           error_type=type(payload).__name__)
        try:
            report = evaluate(payload, cfg=cfg, judge=judge,
                              template=template, instance_id=instance_id)
            return Outcome(instance_id, report=report)
        except Exception as exc:  # isolate every failure
            return Outcome(instance_id, error=str(exc),
                           error_type=type(exc).__name__)

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        outcomes = list(pool.map(run, jobs))

    return outcomes, summarize(outcomes)
