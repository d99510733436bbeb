"""Schema-agnostic scoring for text-to-SQL output.

Evaluates a generated SELECT statement against the natural-language question
it came from: no schema, no reference query, no execution. The result is a
0-100 score with a full diagnostic trail.
"""

from .errors import (
    ConfidenceOutOfRange,
    ConfigError,
    EmptyInput,
    IllegalCharacter,
    InputFormatError,
    InternalInvariantViolation,
    JudgeUnavailable,
    MalformedJudgeOutput,
    ParseError,
    RuleParseError,
    StefError,
    TemplateError,
    TimeoutExceeded,
    TransportError,
    UnknownVerdict,
    UnsupportedConstruct,
    UnterminatedString,
)
from .model import (
    AggFunc,
    AggregationSpec,
    AlignmentRecord,
    AppRules,
    EMPTY_RULES,
    EvalInstance,
    EvalMode,
    FilterOp,
    FilterStatus,
    FilterTriple,
    JoinSpec,
    JudgeOutput,
    NormalizationAnnotation,
    OrderItem,
    Projection,
    QuestionSpec,
    RuleId,
    ScoreBreakdown,
    SqlSpec,
    Tier,
    Verdict,
    canonical_ref,
    validate_instance,
)
from .scoring import (
    assign_tier,
    composite,
    confidence_multiplier,
    mean_phi,
    p90_phi,
)
from .sql_extract import extract_sql_spec, parse_sql_spec, render_canonical
from .question_extract import extract_question_spec, merge_user_enriched
from .normalize import NormalizerConfig, apply_all
from .align import build_alignment_record, classify_filters, filters_match
from .judge import (
    PromptBundle,
    RemoteJudge,
    RemoteJudgeConfig,
    StubJudge,
    load_template,
    parse_judge_output,
    render_prompt,
    serialize_judge_output,
)
from .pipeline import (
    BatchSummary,
    EvaluationReport,
    Outcome,
    evaluate,
    evaluate_batch,
    summarize,
)
from .cli import app_rules_from_dict, load_rules

__version__ = "0.1.0"
