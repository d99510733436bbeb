"""Batch evaluation front-end.

Reads line-delimited records, runs the pipeline, writes one scored record
per input line plus a summary document. Exit status: 0 when every record
scored, 2 when any record errored, 1 on fatal configuration problems.

Input records: {"id": ..., "question": ..., "sql": ...} with optional
"enriched_question" and "rules_profile". A rules_profile names a sibling
profile file (<name>.json next to the --rules file, or next to the input
when no --rules was given) applied to that record alone.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Dict, Optional, Tuple

from .errors import (
    ConfigError,
    InputFormatError,
    ParseError,
    RuleParseError,
    StefError,
)
from .judge import (
    API_KEY_VAR,
    RemoteJudge,
    RemoteJudgeConfig,
    StubJudge,
    load_template,
)
from .model import AppRules, EMPTY_RULES, EvalInstance, canonical_ref
from .normalize import NormalizerConfig
from .pipeline import evaluate_batch
from .sql_extract import normalize_filter, parse_sql_spec

_RULE_KEYS = ("column_mappings", "benign_filters", "ignore_filters")


# ---- rule profiles -----------------------------------------------------------

def _parse_condition(text: str, mappings: Dict[str, str], origin: str):
    probe = AppRules(column_mappings=mappings)
    try:
        spec = parse_sql_spec(f"SELECT * FROM t WHERE {text}", probe)
    except (ParseError, StefError) as exc:
        raise RuleParseError(
            f"{origin}: benign filter {text!r} does not parse: {exc}")
    if len(spec.filters) != 1:
        raise RuleParseError(
            f"{origin}: benign filter {text!r} must be a single condition")
    return normalize_filter(next(iter(spec.filters)))


def app_rules_from_dict(doc: dict, origin: str = "profile") -> AppRules:
    """Build AppRules from the three-key profile structure."""
    if not isinstance(doc, dict):
        raise RuleParseError(f"{origin}: profile must be an object")
    for key in doc:
        if key not in _RULE_KEYS:
            raise RuleParseError(f"{origin}: unknown key {key!r}")

    raw_mappings = doc.get("column_mappings", {})
    if not isinstance(raw_mappings, dict):
        raise RuleParseError(f"{origin}: column_mappings must be an object")
    mappings: Dict[str, str] = {}
    for k, v in raw_mappings.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise RuleParseError(
                f"{origin}: column_mappings entries must map text to text")
        mappings[canonical_ref(k)] = canonical_ref(v)
    for k, v in mappings.items():
        # a mapped value that is itself mapped would need repeated lookups
        if v in mappings and mappings[v] != v:
            raise RuleParseError(
                f"{origin}: column_mappings chains {k!r} -> {v!r} -> "
                f"{mappings[v]!r}; map each reference directly")

    raw_benign = doc.get("benign_filters", [])
    if not isinstance(raw_benign, list):
        raise RuleParseError(f"{origin}: benign_filters must be a list")
    benign = set()
    for entry in raw_benign:
        if not isinstance(entry, str):
            raise RuleParseError(
                f"{origin}: benign_filters entries must be condition text")
        benign.add(_parse_condition(entry, mappings, origin))

    raw_ignore = doc.get("ignore_filters", [])
    if not isinstance(raw_ignore, list):
        raise RuleParseError(f"{origin}: ignore_filters must be a list")
    ignore = set()
    for entry in raw_ignore:
        if not isinstance(entry, str):
            raise RuleParseError(
                f"{origin}: ignore_filters entries must be column names")
        ignore.add(canonical_ref(entry))

    try:
        return AppRules(
            column_mappings=mappings,
            benign_filters=frozenset(benign),
            ignore_filters=frozenset(ignore),
            source=doc,
        )
    except ValueError as exc:
        raise RuleParseError(f"{origin}: {exc}")


def load_rules(path: str) -> AppRules:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise RuleParseError(f"{path}: cannot read profile: {exc}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RuleParseError(f"{path}: profile is not valid JSON: {exc}")
    return app_rules_from_dict(doc, origin=str(path))


# ---- input records -----------------------------------------------------------

class _ProfileCache:
    def __init__(self, directory: Path):
        self.directory = directory
        self._loaded: Dict[str, AppRules] = {}

    def get(self, name: str) -> AppRules:
        if name not in self._loaded:
            self._loaded[name] = load_rules(str(self.directory / f"{name}.json"))
        return self._loaded[name]


def _job_from_line(line: str, line_number: int, default_rules: AppRules,
                   profiles: _ProfileCache) -> Tuple[str, object]:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError:
        return (f"line-{line_number}", InputFormatError(
            f"line {line_number} is not a valid record", line_number))
    if not isinstance(doc, dict):
        return (f"line-{line_number}", InputFormatError(
            f"line {line_number} is not an object", line_number))
    instance_id = str(doc.get("id") or f"line-{line_number}")
    question = doc.get("question")
    sql = doc.get("sql")
    if not isinstance(question, str) or not isinstance(sql, str):
        return (instance_id, InputFormatError(
            f"line {line_number} needs text fields 'question' and 'sql'",
            line_number))
    enriched = doc.get("enriched_question")
    if enriched is not None and not isinstance(enriched, str):
        return (instance_id, InputFormatError(
            f"line {line_number}: enriched_question must be text", line_number))
    rules = default_rules
    profile = doc.get("rules_profile")
    if profile is not None:
        try:
            rules = profiles.get(str(profile))
        except RuleParseError as exc:
            return (instance_id, exc)
    return (instance_id, EvalInstance(
        user_question=question, sql=sql,
        enriched_question=enriched, rules=rules))


# ---- command ------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stef",
        description="Schema-agnostic scoring of text-to-SQL agent output.")
    sub = parser.add_subparsers(dest="command", required=True)
    ev = sub.add_parser("eval", help="score a batch of generated SQL")
    ev.add_argument("--input", required=True,
                    help="line-delimited records to score")
    ev.add_argument("--output",
                    help="scored records path (default: <input>.scored.jsonl)")
    ev.add_argument("--rules", help="application rule profile (JSON)")
    ev.add_argument("--template", help="judge prompt template file")
    ev.add_argument("--judge", choices=("stub", "remote"), default="stub",
                    help="stub is deterministic and offline (default)")
    ev.add_argument("--endpoint", help="chat-completion URL for --judge remote")
    ev.add_argument("--parallelism", type=int, default=4)
    ev.add_argument("--lambda-min", type=int, default=1000,
                    dest="lambda_min",
                    help="LIMIT threshold for the safety-guardrail rule")
    ev.add_argument("--summary",
                    help="summary path (default: <output stem>.summary.json)")
    return parser


def _default_output(input_path: Path) -> Path:
    stem = input_path.name
    for suffix in (".jsonl", ".ndjson", ".json"):
        if stem.endswith(suffix):
            stem = stem[:-len(suffix)]
            break
    return input_path.with_name(stem + ".scored.jsonl")


def _default_summary(output_path: Path) -> Path:
    stem = output_path.name
    if stem.endswith(".jsonl"):
        stem = stem[:-len(".jsonl")]
    return output_path.with_name(stem + ".summary.json")


def _make_judge(args):
    if args.judge == "stub":
        return StubJudge()
    if not args.endpoint:
        raise ConfigError("--judge remote needs --endpoint")
    key = os.environ.get(API_KEY_VAR, "")
    if not key:
        raise ConfigError(
            f"--judge remote needs the {API_KEY_VAR} environment variable")
    return RemoteJudge(RemoteJudgeConfig(endpoint=args.endpoint, api_key=key))


def run(args) -> int:
    input_path = Path(args.input)
    if not input_path.is_file():
        raise ConfigError(f"input file {args.input} does not exist")

    try:
        cfg = NormalizerConfig(lambda_min=args.lambda_min)
    except ConfigError:
        raise ConfigError(f"--lambda-min must be at least 1, got {args.lambda_min}")

    judge = _make_judge(args)
    try:
        template = load_template(args.template)
    except OSError as exc:
        raise ConfigError(f"cannot read template {args.template}: {exc}")

    default_rules = load_rules(args.rules) if args.rules else EMPTY_RULES
    profile_dir = Path(args.rules).parent if args.rules else input_path.parent
    profiles = _ProfileCache(profile_dir)

    jobs = []
    with input_path.open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            jobs.append(_job_from_line(line, n, default_rules, profiles))

    outcomes, summary = evaluate_batch(
        jobs, parallelism=args.parallelism, cfg=cfg,
        judge=judge, template=template)

    output_path = Path(args.output) if args.output else _default_output(input_path)
    with output_path.open("w", encoding="utf-8") as fh:
        for outcome in outcomes:
            fh.write(json.dumps(outcome.to_dict(), sort_keys=True) + "\n")

    summary_doc = json.dumps(summary.to_dict(), indent=2, sort_keys=True)
    summary_path = Path(args.summary) if args.summary \
        else _default_summary(output_path)
    summary_path.write_text(summary_doc + "\n", encoding="utf-8")
    print(summary_doc)

    return 0 if all(o.scored for o in outcomes) else 2


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigError, RuleParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
