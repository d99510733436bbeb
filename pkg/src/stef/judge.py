"""Semantic verdict production.

Three pieces live here: prompt construction with application-rule
injection, a strict parser for the judge's structured output, and two
judges behind the same small surface. The stub judge maps an alignment
record to a verdict through a fixed table so offline runs are exactly
reproducible; the remote judge posts the rendered prompt to a
chat-completion endpoint with temperature 0 and bounded retries.

Prompt templates are plain text files with named placeholders, versioned
by a content hash so every report records which template produced it.
"""

import hashlib
import json
import os
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Tuple

import requests

from .errors import (
    ConfidenceOutOfRange,
    MalformedJudgeOutput,
    TemplateError,
    TimeoutExceeded,
    TransportError,
    UnknownVerdict,
)
from .model import (
    AlignmentRecord,
    AppRules,
    EMPTY_RULES,
    EvalInstance,
    FilterStatus,
    JudgeOutput,
    Verdict,
    sorted_filters,
)

_PLACEHOLDERS = ("{app_rules}", "{question}", "{enriched_question}",
                 "{sql}", "{comparison_record}")

API_KEY_VAR = "STEF_JUDGE_API_KEY"


# ---- template handling -----------------------------------------------------

def template_id_for(name: str, text: str) -> str:
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:8]
    return f"{name}@{digest}"


def load_template(path: Optional[str] = None) -> Tuple[str, str]:
    """Return (template text, template id); defaults to the packaged file."""
    if path is None:
        ref = resources.files("stef").joinpath("data/judge_template.txt")
        text = ref.read_text(encoding="utf-8")
        name = "judge_template"
    else:
        p = Path(path)
        text = p.read_text(encoding="utf-8")
        name = p.stem
    return text, template_id_for(name, text)


@dataclass(frozen=True)
class PromptBundle:
    rendered_prompt: str
    template_id: str
    injected_rules: AppRules = EMPTY_RULES


def _rules_block(rules: AppRules) -> str:
    if rules.source is not None:
        return json.dumps(rules.source, indent=2, sort_keys=True)
    reconstructed = {
        "column_mappings": dict(sorted(rules.column_mappings.items())),
        "benign_filters": [f.to_dict() for f in sorted_filters(rules.benign_filters)],
        "ignore_filters": sorted(rules.ignore_filters),
    }
    return json.dumps(reconstructed, indent=2, sort_keys=True)


def render_comparison_record(record: AlignmentRecord) -> str:
    """Serialize the alignment record for the prompt.

    Every filter the record holds appears exactly once: matched and
    missing under their own headings, mismatched as required-vs-actual
    pairs, extras on the SQL side.
    """
    by_lhs = {}
    for s in sorted_filters(record.mismatched_actual):
        by_lhs.setdefault(s.lhs, []).append(s.to_dict())
    doc = {
        "filters": {
            "status": record.status.value,
            "matched": [f.to_dict() for f in sorted_filters(record.matched)],
            "missing_from_sql": [f.to_dict()
                                 for f in sorted_filters(record.missing)],
            "mismatched": [
                {"required": f.to_dict(), "actual_in_sql": by_lhs.get(f.lhs, [])}
                for f in sorted_filters(record.mismatched)
            ],
            "extra_in_sql": [f.to_dict() for f in sorted_filters(record.extra)],
            "extras_all_benign": record.extras_all_benign,
        },
        "projection_match": record.projection_match,
        "aggregation_match": record.aggregation_match,
        "grouping_match": record.grouping_match,
        "rule_firings": [a.to_dict() for a in record.rule_firings],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


_JUDGE_ONLY_NOTE = (
    "unavailable: the SQL uses {construct}, which is outside the deterministic "
    "comparison subset. Assess the filters directly from the SQL text and "
    "report filters_applied_status yourself."
)


def render_prompt(inst: EvalInstance, record: Optional[AlignmentRecord],
                  template: str, template_id: str,
                  unsupported_construct: str = "") -> PromptBundle:
    """Fill the template; a missing placeholder is a configuration error."""
    for ph in _PLACEHOLDERS:
        if ph not in template:
            raise TemplateError(f"template is missing the {ph} placeholder")
    if record is not None:
        comparison = render_comparison_record(record)
    else:
        comparison = _JUDGE_ONLY_NOTE.format(
            construct=unsupported_construct or "an unsupported construct")
    # .replace, not .format: the JSON blocks are full of literal braces
    rendered = (template
                .replace("{app_rules}", _rules_block(inst.rules))
                .replace("{question}", inst.user_question)
                .replace("{enriched_question}", inst.enriched_question or "")
                .replace("{sql}", inst.sql)
                .replace("{comparison_record}", comparison))
    return PromptBundle(rendered, template_id, inst.rules)


# ---- structured output parsing ---------------------------------------------

def _repair(raw: str) -> str:
    text = raw.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    start = text.find("{")
    if start == -1:
        return text
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        c = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif c == "\\":
                escaped = True
            elif c == '"':
                in_string = False
            continue
        if c == '"':
            in_string = True
        elif c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    return text[start:]


def _match_enum(text: str, enum_cls):
    key = "_".join(str(text).strip().casefold().replace("-", " ")
                   .replace("_", " ").split())
    for member in enum_cls:
        if member.value == key:
            return member
    return None


def parse_judge_output(raw: str) -> JudgeOutput:
    """Parse the judge's structured object, allowing one repair pass."""
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        try:
            doc = json.loads(_repair(raw))
        except (json.JSONDecodeError, TypeError):
            raise MalformedJudgeOutput("output is not a JSON object", raw=raw)
    if not isinstance(doc, dict):
        raise MalformedJudgeOutput("output is not a JSON object", raw=raw)
    if "verdict" not in doc:
        raise MalformedJudgeOutput("output lacks a verdict field", raw=raw)
    if "confidence" not in doc:
        raise MalformedJudgeOutput("output lacks a confidence field", raw=raw)

    verdict = _match_enum(doc["verdict"], Verdict)
    if verdict is None:
        raise UnknownVerdict(f"unknown verdict {doc['verdict']!r}", raw=raw)

    confidence = doc["confidence"]
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise MalformedJudgeOutput("confidence is not a number", raw=raw)
    if confidence < -0.01 or confidence > 1.01:
        raise ConfidenceOutOfRange(
            f"confidence {confidence} is outside [0, 1]")
    confidence = min(1.0, max(0.0, float(confidence)))  # tolerate tiny drift

    status = None
    if doc.get("filters_applied_status") is not None:
        status = _match_enum(doc["filters_applied_status"], FilterStatus)
        if status is None:
            raise MalformedJudgeOutput(
                f"unknown filters_applied_status {doc['filters_applied_status']!r}",
                raw=raw)

    return JudgeOutput(
        verdict=verdict,
        confidence=confidence,
        rationale=str(doc.get("rationale", "")),
        filters_applied_status=status,
    )


def serialize_judge_output(out: JudgeOutput) -> str:
    doc = {
        "verdict": out.verdict.value,
        "confidence": out.confidence,
        "rationale": out.rationale,
    }
    if out.filters_applied_status is not None:
        doc["filters_applied_status"] = out.filters_applied_status.value
    return json.dumps(doc, sort_keys=True)


# ---- judges -----------------------------------------------------------------

class StubJudge:
    """Deterministic offline judge driven by the alignment record alone."""

    consumes = "record"

    def evaluate(self, record: Optional[AlignmentRecord]) -> JudgeOutput:
        if record is None:
            # nothing was aligned; a neutral middle verdict keeps the
            # instance scoreable without pretending to certainty
            return JudgeOutput(
                Verdict.POTENTIALLY_INCORRECT, 0.70,
                rationale="no deterministic comparison was possible",
                filters_applied_status=FilterStatus.PARTIALLY_APPLIED)

        dims_ok = (record.projection_match and record.aggregation_match
                   and record.grouping_match)
        if not dims_ok or record.status is FilterStatus.NOT_APPLIED:
            return JudgeOutput(Verdict.INCORRECT, 0.90,
                               rationale="a required dimension failed to align")
        if record.status is FilterStatus.FULLY_APPLIED:
            return JudgeOutput(Verdict.CORRECT, 0.95,
                               rationale="all requirements aligned")
        if record.status is FilterStatus.FULLY_APPLIED_WITH_EXTRAS:
            if record.extras_all_benign:
                return JudgeOutput(Verdict.CORRECT, 0.90,
                                   rationale="extras are benign defaults")
            return JudgeOutput(Verdict.LIKELY_CORRECT, 0.80,
                               rationale="extras are not known defaults")
        return JudgeOutput(Verdict.POTENTIALLY_INCORRECT, 0.70,
                           rationale="only part of the requirements aligned")


_REMINDER = "\n\nReturn only the structured JSON object, nothing else."


@dataclass
class RemoteJudgeConfig:
    endpoint: str
    model: str = "judge-default"
    timeout: float = 30.0
    max_attempts: int = 3
    backoff_base: float = 0.5
    api_key: Optional[str] = None  # falls back to the environment variable

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")


class RemoteJudge:
    """Chat-completion client with bounded retries and one reminder pass."""

    consumes = "bundle"

    def __init__(self, cfg: RemoteJudgeConfig):
        self.cfg = cfg
        self._session = requests.Session()

    def _headers(self) -> dict:
        key = self.cfg.api_key or os.environ.get(API_KEY_VAR, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_once(self, prompt: str) -> str:
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        try:
            resp = self._session.post(self.cfg.endpoint, json=body,
                                      headers=self._headers(),
                                      timeout=self.cfg.timeout)
        except requests.Timeout:
            raise TimeoutExceeded(
                f"judge endpoint took longer than {self.cfg.timeout}s")
        except requests.RequestException as exc:
            raise TransportError(f"judge endpoint unreachable: {exc}")
        if resp.status_code >= 500:
            raise TransportError(f"judge endpoint returned {resp.status_code}")
        if resp.status_code >= 400:
            # the request itself is bad; repeating it cannot help
            err = TransportError(
                f"judge endpoint rejected the request: {resp.status_code}")
            err.retryable = False
            raise err
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise MalformedJudgeOutput("response body is not in completion shape",
                                       raw=resp.text[:2000])

    def _post_with_retries(self, prompt: str) -> str:
        last = None
        for attempt in range(self.cfg.max_attempts):
            try:
                return self._post_once(prompt)
            except TransportError as exc:  # TimeoutExceeded included
                if not getattr(exc, "retryable", True):
                    raise
                last = exc
            if attempt + 1 < self.cfg.max_attempts:
                time.sleep(self.cfg.backoff_base * (2 ** attempt))
        raise last

    def evaluate(self, bundle: PromptBundle) -> JudgeOutput:
        raw = self._post_with_retries(bundle.rendered_prompt)
        try:
            return parse_judge_output(raw)
        except MalformedJudgeOutput:
            # one reminder pass, never a loop: repeated malformed output
            # is a signal worth surfacing, not hiding
            raw = self._post_with_retries(bundle.rendered_prompt + _REMINDER)
            return parse_judge_output(raw)
