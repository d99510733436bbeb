"""Question-side semantic extraction via deterministic keyword cues.

Turns a natural-language question (and, when present, its enriched
reformulation) into a QuestionSpec: which aggregates, groupings, filters,
ordering, and top-k constraints the SQL is expected to honor.

The cue vocabulary lives in data/cue_table.json, a flat phrase-to-action
map, so deployments can extend it without touching code. Everything here
is heuristic by design: a vague question legitimately yields an empty
spec, and whatever the heuristics miss still reaches the judge as raw
text. For deployments with an LLM-backed extractor, any callable with
the extract_question_spec signature can replace this one in the pipeline
configuration; these heuristics are the offline default.

Filter cues need a column for values like "China". With no schema to
consult, the column is inferred from context only: a trailing dimension
noun ("the APAC region" -> region) or the nearest preceding grouping
dimension ("per country for China" -> country). When neither exists the
value is dropped rather than guessed.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from typing import Dict, List, Mapping, Optional, Tuple

from .model import (
    AggFunc,
    AggregationSpec,
    AppRules,
    EMPTY_RULES,
    FilterOp,
    FilterTriple,
    QuestionSpec,
    canonical_ref,
)
from .sql_extract import normalize_filter

__all__ = [
    "load_cue_table",
    "extract_question_spec",
    "merge_user_enriched",
]

_STOPWORDS = {"the", "a", "an", "of", "all", "each", "me", "my", "our",
              "their", "its", "is", "are", "was", "were"}

_ARTICLES = {"the", "a", "an"}

_WORD_RE = re.compile(r"'[^']*'|\"[^\"]*\"|[A-Za-z][\w-]*|\d+(?:\.\d+)?")

_YEAR_RE = re.compile(r"^(19|20)\d{2}$")
_QUARTER_RE = re.compile(r"^q[1-4]$")
_TOPK_RE = re.compile(r"\b(top|first|bottom)\s+(\d+)\b")

# "since 2020" and friends carry a comparison, not an equality.
_YEAR_COMPARATORS = {
    "since": FilterOp.GTE,
    "after": FilterOp.GT,
    "before": FilterOp.LT,
    "until": FilterOp.LTE,
    "through": FilterOp.LTE,
}

_WHERE_QUOTED_RE = re.compile(
    r"\bwhere\s+([a-z][a-z0-9_ -]*?)\s+(?:is|equals|=)\s+'([^']+)'")
_WHERE_BARE_RE = re.compile(
    r"\bwhere\s+([a-z][a-z0-9_ -]*?)\s+(?:is|equals|=)\s+([a-z0-9][\w.-]*)")


@lru_cache(maxsize=4)
def _packaged_cue_table() -> Mapping[str, str]:
    text = resources.files("stef").joinpath("data/cue_table.json").read_text("utf-8")
    return json.loads(text)


def load_cue_table(path: Optional[str] = None) -> Dict[str, str]:
    """Load the phrase->action cue table, packaged by default."""
    if path is None:
        return dict(_packaged_cue_table())
    with open(path, encoding="utf-8") as fh:
        table = json.load(fh)
    if not isinstance(table, dict):
        raise ValueError("cue table must be a flat phrase-to-action object")
    return table


def _singularize(word: str) -> str:
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith(("ses", "xes", "zes", "ches", "shes")):
        return word[:-2]
    if word.endswith("s") and not word.endswith(("ss", "us", "is")) and len(word) > 3:
        return word[:-1]
    return word


def _term_key(words: List[str], rules: AppRules) -> str:
    if words:
        words = words[:-1] + [_singularize(words[-1])]
    return rules.map_column(canonical_ref(" ".join(words)))


class _Word:
    __slots__ = ("lower", "orig", "quoted", "consumed")

    def __init__(self, orig: str):
        self.quoted = orig[:1] in "'\"" and len(orig) >= 2
        self.orig = orig[1:-1] if self.quoted else orig
        self.lower = self.orig.lower()
        self.consumed = False

    def is_number(self) -> bool:
        return not self.quoted and self.lower[:1].isdigit()

    def is_capitalized(self) -> bool:
        return not self.quoted and self.orig[:1].isupper()


class _CueScan:
    def __init__(self, text: str, rules: AppRules, cue_table: Mapping[str, str]):
        self.text = text
        self.rules = rules
        self.words = [_Word(m.group(0)) for m in _WORD_RE.finditer(text)]
        # bucket phrases by first word, longest first, for greedy matching
        self.phrases: Dict[str, List[Tuple[List[str], str]]] = {}
        for phrase, action in cue_table.items():
            parts = phrase.lower().split()
            self.phrases.setdefault(parts[0], []).append((parts, action))
        for bucket in self.phrases.values():
            bucket.sort(key=lambda e: (-len(e[0]), e[0]))

        self.outputs: set = set()
        self.aggregations: set = set()
        self.filters: set = set()
        self.group_dims: List[Tuple[str, int]] = []  # (key, position) for lhs inference
        self.pending_values: List[Tuple[str, int]] = []  # values awaiting a column
        self.explicit_order = False
        self.topk: Optional[int] = None

    # ---- phrase machinery -------------------------------------------------

    def _match_at(self, i: int) -> Optional[Tuple[str, int]]:
        w = self.words[i]
        if w.quoted:
            return None
        for parts, action in self.phrases.get(w.lower, ()):
            if i + len(parts) <= len(self.words) and all(
                    self.words[i + k].lower == parts[k] for k in range(len(parts))):
                return action, len(parts)
        return None

    def _is_boundary(self, i: int) -> bool:
        if i >= len(self.words):
            return True
        w = self.words[i]
        return w.is_number() or w.quoted or self._match_at(i) is not None

    def _collect_term(self, i: int, max_words: int = 3) -> Tuple[List[str], int]:
        words = []
        while i < len(self.words) and len(words) < max_words:
            w = self.words[i]
            if w.lower in _STOPWORDS:
                i += 1
                continue
            if w.lower == "and" or self._is_boundary(i):
                break
            words.append(w.lower)
            i += 1
        return words, i

    def _collect_term_backwards(self, i: int,
                                max_words: int = 3) -> Tuple[List[str], bool]:
        # "customer count" style: the noun phrase sits before the cue
        words: List[str] = []
        saw_distinct = False
        while i >= 0 and len(words) < max_words:
            w = self.words[i]
            if w.lower in ("distinct", "unique"):
                saw_distinct = True
                i -= 1
                continue
            if w.lower in _STOPWORDS:
                i -= 1
                continue
            if w.quoted or w.is_number() or self._is_boundary(i):
                break
            words.append(w.lower)
            i -= 1
        words.reverse()
        return words, saw_distinct

    # ---- passes -----------------------------------------------------------

    def run(self) -> None:
        self._pass_topk()
        self._pass_year_ranges()
        self._pass_where_phrases()
        self._pass_cues()
        self._resolve_pending_values()
        self._pass_quarters()
        self._pass_bare_years()

    def _pass_topk(self) -> None:
        m = _TOPK_RE.search(self.text.lower())
        if m:
            self.topk = int(m.group(2))
            self.explicit_order = True
            # mark the count so the year pass cannot mistake e.g. "top 2023"
            for w in self.words:
                if not w.consumed and w.lower == m.group(2):
                    w.consumed = True
                    break

    def _pass_year_ranges(self) -> None:
        words = self.words
        for i, w in enumerate(words):
            if w.quoted or w.consumed:
                continue
            nxt = words[i + 1] if i + 1 < len(words) else None
            if w.lower in _YEAR_COMPARATORS and nxt is not None \
                    and _YEAR_RE.match(nxt.lower) and not nxt.consumed:
                self._add_filter(FilterTriple(
                    self.rules.map_column("year"),
                    _YEAR_COMPARATORS[w.lower], int(nxt.lower)))
                nxt.consumed = True
            elif w.lower == "between" and i + 3 < len(words) \
                    and _YEAR_RE.match(words[i + 1].lower) \
                    and words[i + 2].lower == "and" \
                    and _YEAR_RE.match(words[i + 3].lower):
                self._add_filter(FilterTriple(
                    self.rules.map_column("year"), FilterOp.BETWEEN,
                    (int(words[i + 1].lower), int(words[i + 3].lower))))
                words[i + 1].consumed = True
                words[i + 3].consumed = True

    def _pass_where_phrases(self) -> None:
        lowered = self.text.lower()
        for regex in (_WHERE_QUOTED_RE, _WHERE_BARE_RE):
            for m in regex.finditer(lowered):
                lhs = _term_key(m.group(1).split(), self.rules)
                if not lhs:
                    continue
                raw = m.group(2)
                value = int(raw) if raw.isdigit() else raw
                self._add_filter(FilterTriple(lhs, FilterOp.EQ, value))

    def _pass_cues(self) -> None:
        i = 0
        while i < len(self.words):
            hit = self._match_at(i)
            if hit is None:
                i += 1
                continue
            action, length = hit
            i = self._dispatch(action, i, i + length)

    def _pass_quarters(self) -> None:
        for w in self.words:
            if not w.quoted and not w.consumed and _QUARTER_RE.match(w.lower):
                self._add_filter(FilterTriple(
                    self.rules.map_column("quarter"), FilterOp.EQ, w.lower))

    def _pass_bare_years(self) -> None:
        for w in self.words:
            if not w.quoted and not w.consumed and _YEAR_RE.match(w.lower):
                self._add_filter(FilterTriple(
                    self.rules.map_column("year"), FilterOp.EQ, int(w.lower)))

    # ---- dispatch -----------------------------------------------------------

    def _dispatch(self, action: str, start: int, after: int) -> int:
        if action.startswith("agg:"):
            return self._on_aggregation(AggFunc(action[4:]), start, after)
        if action == "group_by":
            return self._on_grouping(after)
        if action == "explicit_order":
            self.explicit_order = True
            return after
        if action == "top_k":
            self.explicit_order = True  # k itself came from the prepass
            return after
        if action == "filter_marker":
            return self._on_filter_marker(after)
        if action == "outputs":
            return self._on_outputs(after)
        return after

    def _on_aggregation(self, func: AggFunc, start: int, i: int) -> int:
        # a MAX/MIN cue is a ranking word unless a single value is requested
        if func in (AggFunc.MAX, AggFunc.MIN) and self.topk not in (None, 1):
            return i
        # "distinct customer count" puts the marker before the cue,
        # "count of distinct customers" after it
        distinct = start > 0 and self.words[start - 1].lower in ("distinct", "unique")
        if i < len(self.words) and self.words[i].lower in ("distinct", "unique"):
            distinct = True
            i += 1
        term, i = self._collect_term(i)
        if not term:
            term, saw = self._collect_term_backwards(start - 1)
            distinct = distinct or saw
        if not term:
            return i
        column = _term_key(term, self.rules)
        if distinct and func is not AggFunc.COUNT:
            distinct = False
        agg = AggregationSpec(func, column, distinct)
        self.aggregations.add(agg)
        self.outputs.add(agg.canonical)
        return i

    def _on_grouping(self, i: int) -> int:
        while True:
            term, i = self._collect_term(i)
            if not term:
                return i
            self.group_dims.append((_term_key(term, self.rules), i))
            if i < len(self.words) and self.words[i].lower == "and":
                i += 1
                continue
            return i

    def _on_filter_marker(self, i: int) -> int:
        while i < len(self.words) and self.words[i].lower in _ARTICLES:
            i += 1
        if i >= len(self.words):
            return i
        w = self.words[i]
        if w.quoted:
            return self._finish_filter_value(w.orig, i + 1)
        if w.is_number():
            return i  # year and quarter passes own numeric values
        if w.is_capitalized():
            value_words = [w.orig]
            j = i + 1
            while j < len(self.words) and len(value_words) < 3 \
                    and self.words[j].is_capitalized():
                value_words.append(self.words[j].orig)
                j += 1
            return self._finish_filter_value(" ".join(value_words), j)
        return i

    def _finish_filter_value(self, value: str, i: int) -> int:
        # a trailing dimension noun names the column outright
        if i < len(self.words):
            w = self.words[i]
            if not w.quoted and not w.is_number() and not w.is_capitalized() \
                    and w.lower not in _STOPWORDS and w.lower != "and" \
                    and self._match_at(i) is None:
                lhs = _term_key([w.lower], self.rules)
                if lhs:
                    self._add_filter(FilterTriple(lhs, FilterOp.EQ, value))
                return i + 1
        # otherwise wait: a grouping dimension may still name it
        self.pending_values.append((value, i))
        return i

    def _resolve_pending_values(self) -> None:
        for value, position in self.pending_values:
            preceding = [key for key, at in self.group_dims if at <= position]
            if preceding:
                lhs = preceding[-1]
            elif len(self.group_dims) == 1:
                lhs = self.group_dims[0][0]
            else:
                continue  # no column in sight; dropping beats guessing
            self._add_filter(FilterTriple(lhs, FilterOp.EQ, value))

    def _on_outputs(self, i: int) -> int:
        while True:
            term, i = self._collect_term(i)
            if not term:
                return i
            self.outputs.add(_term_key(term, self.rules))
            if i < len(self.words) and self.words[i].lower == "and":
                i += 1
                continue
            return i

    def _add_filter(self, triple: FilterTriple) -> None:
        self.filters.add(normalize_filter(triple))

    def to_spec(self) -> QuestionSpec:
        return QuestionSpec(
            outputs=frozenset(self.outputs),
            aggregations=frozenset(self.aggregations),
            filters=frozenset(self.filters),
            group_by=frozenset(key for key, _ in self.group_dims),
            explicit_order=self.explicit_order,
            topk_request=self.topk,
        )


def _extract_single(text: str, rules: AppRules,
                    cue_table: Mapping[str, str]) -> QuestionSpec:
    scan = _CueScan(text, rules, cue_table)
    scan.run()
    return scan.to_spec()


def extract_question_spec(q_user: str, q_enriched: Optional[str] = None,
                          rules: AppRules = EMPTY_RULES,
                          cue_table: Optional[Mapping[str, str]] = None) -> QuestionSpec:
    """Extract the question-side spec, merging the enriched text if given."""
    table = _packaged_cue_table() if cue_table is None else cue_table
    spec = _extract_single(q_user, rules, table)
    if q_enriched and q_enriched.strip():
        spec = merge_user_enriched(spec, _extract_single(q_enriched, rules, table))
    return spec


def _by_lhs(filters) -> Dict[str, frozenset]:
    grouped: Dict[str, set] = {}
    for f in filters:
        grouped.setdefault(f.lhs, set()).add(f)
    return {k: frozenset(v) for k, v in grouped.items()}


def merge_user_enriched(spec_user: QuestionSpec,
                        spec_enriched: QuestionSpec) -> QuestionSpec:
    """Union both specs; the enriched side wins column-level filter conflicts.

    The enriched question is the text the SQL was actually generated from,
    so its constraints take precedence; conflicts are recorded, not scored.
    """
    user_f = _by_lhs(spec_user.filters)
    enriched_f = _by_lhs(spec_enriched.filters)
    merged: set = set()
    notes: List[str] = []
    for lhs in set(user_f) | set(enriched_f):
        u, e = user_f.get(lhs), enriched_f.get(lhs)
        if u and e and u != e:
            merged |= e
            notes.append(
                f"filter conflict on {lhs}: enriched text overrides the user text")
        else:
            merged |= (u or frozenset()) | (e or frozenset())

    topk = spec_enriched.topk_request
    if topk is None:
        topk = spec_user.topk_request
    elif spec_user.topk_request not in (None, topk):
        notes.append("top-k conflict: enriched text overrides the user text")

    return QuestionSpec(
        outputs=spec_user.outputs | spec_enriched.outputs,
        aggregations=spec_user.aggregations | spec_enriched.aggregations,
        filters=frozenset(merged),
        group_by=spec_user.group_by | spec_enriched.group_by,
        explicit_order=spec_user.explicit_order or spec_enriched.explicit_order,
        topk_request=topk,
        conflicts=spec_user.conflicts + spec_enriched.conflicts + tuple(sorted(notes)),
    )
