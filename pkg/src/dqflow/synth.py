"""Semantic test synthesis: model context, prompts, providers, and the audit.

The provider contract is a single method, generate(prompt, seed) -> text.
Two implementations ship: an HTTP provider for a real chat-completion
endpoint, and a mock that is a pure function of (prompt, seed, profile)
so experiments stay hermetic and bit-reproducible. The mock derives its
output from the schema listing inside the prompt with a small rule set —
not_null everywhere, unique on primary keys, accepted_values on
low-cardinality text columns, relationships by column-name convention,
and a few cross-column predicates — minus whatever the fixture profile
records as not emitted.

Auditing classifies every generated item, with precedence
invalid > redundant > useful > low_value:

- invalid:    failed validation/compilation, or errored on the clean run
- redundant:  semantic duplicate of a baseline test (merge record)
- useful:     passes clean and detects an anomaly the baseline alone missed
- low_value:  executes cleanly but contributes no incremental detection
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import requests
import yaml

from .anomalies import ComparatorReport
from .canonical import encode_value
from .dsl import InvalidCandidate, ModelEntry, ParseIssue, SchemaFile, parse_schema_document
from .engine import MergeResult, TestRunReport
from .errors import AuditError, ExtractionError, GenerationError, ProviderError
from .models import CURATED_MODELS

AUDIT_CLASSES = ("useful", "redundant", "low_value", "invalid")
DEFAULT_SAMPLE_ROWS = 5
API_KEY_ENV_VAR = "DQ_LLM_API_KEY"


@dataclass(frozen=True)
class ModelContext:
    """What the generator is told about one model: schema plus sample rows."""

    model: str
    columns: tuple[tuple[str, str, bool], ...]  # (name, type text, nullable)
    primary_key: tuple[str, ...]
    sample_rows: tuple[tuple[tuple[str, str], ...], ...]  # rows of (column, rendered value)


def extract_context(backend, model: str, sample_n: int = DEFAULT_SAMPLE_ROWS) -> ModelContext:
    """Deterministic context for one curated model, samples ordered by key."""
    if model not in CURATED_MODELS:
        raise ExtractionError(f"{model!r} is not a curated model")
    if not backend.table_exists(model):
        raise ExtractionError(f"model {model!r} is not materialized")
    schema = backend.describe(model)
    keys = schema.primary_key or (schema.columns[0].name,)
    order = ", ".join(f'"{k}"' for k in keys)
    rows = backend.query(
        f"SELECT * FROM {backend.table_ref(model)} ORDER BY {order} LIMIT ?", (int(sample_n),)
    )
    rendered_rows = []
    for row in rows:
        rendered = []
        for column, value in zip(schema.columns, row):
            rendered.append(
                (column.name.lower(), encode_value(value, column.type).decode("utf-8", "replace"))
            )
        rendered_rows.append(tuple(rendered))
    return ModelContext(
        model=model,
        columns=tuple((c.name.lower(), str(c.type), c.nullable) for c in schema.columns),
        primary_key=tuple(k.lower() for k in keys),
        sample_rows=tuple(rendered_rows),
    )


_PROMPT_TEMPLATE = """Generate declarative data-quality tests for the analytical model described below.

Respond with a single YAML document and no surrounding prose, in exactly this shape:

version: 1
models:
  - name: <model name>
    columns:
      - name: <column name>
        tests:
          - not_null
          - unique
          - accepted_values: {{ values: [<value>, ...] }}
          - relationship: {{ to: <model>, field: <column> }}
    tests:
      - expression: {{ predicate: "<boolean SQL over this model's columns>" }}

Allowed test kinds: not_null, unique, accepted_values, relationship, expression.
Attach expression tests at model level only.

Model: {model}
Primary key: {primary_key}
Columns:
{columns}

Sample rows (first {n} ordered by primary key):
{samples}

Only reference the listed columns. Emit tests only for this model."""


def build_prompt(ctx: ModelContext) -> str:
    """Render the fixed-order prompt; equal contexts give identical prompts."""
    columns = "\n".join(
        f"- {name}: {type_text}{'' if nullable else ' not null'}"
        for name, type_text, nullable in ctx.columns
    )
    if ctx.sample_rows:
        samples = "\n".join(
            "- " + ", ".join(f"{name}={value}" for name, value in row)
            for row in ctx.sample_rows
        )
    else:
        samples = "(no sample rows)"
    return _PROMPT_TEMPLATE.format(
        model=ctx.model,
        primary_key=", ".join(ctx.primary_key),
        columns=columns,
        n=len(ctx.sample_rows),
        samples=samples,
    )


# -- providers ----------------------------------------------------------------


@dataclass(frozen=True)
class MockProfile:
    """Fixture profile pinning the mock's behavior for reproducible runs.

    ``skip`` lists rule outputs a recorded provider run did not emit, keyed
    by model name; entries are "<kind>:<column>" or "expression:<predicate>".
    Seeds listed in ``degenerate_seeds`` produce an empty suite, which lets
    stability protocols exercise their failure path.
    """

    name: str = "curated"
    low_cardinality_max: int = 3
    accepted_value_hints: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: {
            "match_status": ("FINISHED", "SCHEDULED", "POSTPONED"),
            "result_label": ("HOME_WIN", "AWAY_WIN", "DRAW"),
        }
    )
    relationship_suffixes: Mapping[str, tuple[str, str]] = field(
        default_factory=lambda: {"_team_id": ("dim_teams", "team_id")}
    )
    skip: Mapping[str, frozenset[str]] = field(
        default_factory=lambda: {
            "fct_training_dataset": frozenset(
                {
                    "not_null:match_id",
                    "unique:match_id",
                    "expression:home_team_id <> away_team_id",
                }
            )
        }
    )
    degenerate_seeds: frozenset[int] = frozenset()


_MODEL_LINE_RE = re.compile(r"^Model: (\S+)$", re.MULTILINE)
_PK_LINE_RE = re.compile(r"^Primary key: (.*)$", re.MULTILINE)
_COLUMN_LINE_RE = re.compile(r"^- ([a-z_][a-z0-9_]*): ([a-z]+(?:\(\d+,\d+\))?)( not null)?$")
_SAMPLE_PAIR_RE = re.compile(r"([a-z_][a-z0-9_]*)=([^,]*)")


class MockProvider:
    """Deterministic rule-driven stand-in for a text-generation service."""

    def __init__(self, profile: MockProfile | None = None) -> None:
        self.profile = profile or MockProfile()

    def generate(self, prompt: str, seed: int) -> str:
        if seed in self.profile.degenerate_seeds:
            model = self._parse_model_name(prompt)
            return yaml.safe_dump({"version": 1, "models": [{"name": model}]}, sort_keys=False)
        model, pk, columns, samples = self._parse_prompt(prompt)
        tests = self._rule_tests(model, pk, columns, samples)
        return yaml.safe_dump(self._to_document(model, columns, tests), sort_keys=False, width=1000)

    @staticmethod
    def _parse_model_name(prompt: str) -> str:
        match = _MODEL_LINE_RE.search(prompt)
        if not match:
            raise ProviderError("prompt has no model section")
        return match.group(1)

    def _parse_prompt(self, prompt: str):
        model = self._parse_model_name(prompt)
        pk_match = _PK_LINE_RE.search(prompt)
        pk = tuple(p.strip() for p in pk_match.group(1).split(",")) if pk_match else ()
        columns: list[tuple[str, str]] = []
        samples: dict[str, list[str]] = {}
        in_columns = False
        in_samples = False
        for line in prompt.splitlines():
            if line.startswith("Columns:"):
                in_columns, in_samples = True, False
                continue
            if line.startswith("Sample rows"):
                in_columns, in_samples = False, True
                continue
            if not line.strip():
                in_columns = False
                continue
            if in_columns:
                match = _COLUMN_LINE_RE.match(line.strip())
                if match:
                    columns.append((match.group(1), match.group(2)))
            elif in_samples and line.startswith("- "):
                for name, value in _SAMPLE_PAIR_RE.findall(line[2:]):
                    samples.setdefault(name, []).append(value.strip())
        return model, pk, columns, samples

    def _rule_tests(
        self,
        model: str,
        pk: Sequence[str],
        columns: Sequence[tuple[str, str]],
        samples: Mapping[str, Sequence[str]],
    ):
        skipped = self.profile.skip.get(model, frozenset())
        column_tests: dict[str, list[object]] = {}
        names = [name for name, _ in columns]
        for name, type_text in columns:
            tests: list[object] = []
            if f"not_null:{name}" not in skipped:
                tests.append("not_null")
            if name in pk and f"unique:{name}" not in skipped:
                tests.append("unique")
            if type_text == "text" and f"accepted_values:{name}" not in skipped:
                observed = list(dict.fromkeys(samples.get(name, ())))
                if observed and len(observed) <= self.profile.low_cardinality_max:
                    hint = self.profile.accepted_value_hints.get(name)
                    values = list(hint) if hint else sorted(observed)
                    tests.append({"accepted_values": {"values": values}})
            for suffix, (to_model, to_column) in self.profile.relationship_suffixes.items():
                if name.endswith(suffix) and f"relationship:{name}" not in skipped:
                    tests.append({"relationship": {"to": to_model, "field": to_column}})
            if tests:
                column_tests[name] = tests

        predicates = []
        if {"home_goals", "away_goals"} <= set(names):
            predicates.append("home_goals >= 0 and away_goals >= 0")
        if {"home_team_id", "away_team_id"} <= set(names):
            predicates.append("home_team_id <> away_team_id")
        if {"goal_diff", "result_label"} <= set(names):
            predicates.append("goal_diff is not null and result_label is not null")
        model_tests = [
            {"expression": {"predicate": p}} for p in predicates if f"expression:{p}" not in skipped
        ]
        return column_tests, model_tests

    @staticmethod
    def _to_document(model, columns, tests) -> dict:
        column_tests, model_tests = tests
        entry: dict = {"name": model}
        rendered_columns = [
            {"name": name, "tests": column_tests[name]}
            for name, _ in columns
            if name in column_tests
        ]
        if rendered_columns:
            entry["columns"] = rendered_columns
        if model_tests:
            entry["tests"] = model_tests
        return {"version": 1, "models": [entry]}


class HttpProvider:
    """Chat-completion HTTP provider; the API key only ever comes from the env."""

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        *,
        key_env_var: str = API_KEY_ENV_VAR,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.endpoint = endpoint
        self.model_name = model_name
        self.key_env_var = key_env_var
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sleep = sleep

    def generate(self, prompt: str, seed: int) -> str:
        api_key = os.environ.get(self.key_env_var)
        if not api_key:
            raise ProviderError(f"environment variable {self.key_env_var} is not set")
        payload = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "seed": seed,
        }
        headers = {"Authorization": f"Bearer {api_key}"}
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                response.raise_for_status()
                data = response.json()
                return data["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    self._sleep(self.backoff_s * (2**attempt))
        raise ProviderError(f"provider failed after {self.max_retries} attempts: {last_error}")


# -- generation ---------------------------------------------------------------


@dataclass(frozen=True)
class GenerationResult:
    schema_file: SchemaFile
    raw_responses: dict[str, str]  # model -> verbatim provider output
    invalid_candidates: tuple[InvalidCandidate, ...]
    per_model_counts: dict[str, int]

    @property
    def total_items(self) -> int:
        return sum(self.per_model_counts.values()) + len(self.invalid_candidates)


def generate_tests(provider, contexts: Sequence[ModelContext], seed: int) -> GenerationResult:
    """Prompt the provider per model and validate the answers into one file.

    Items that fail validation are retained as invalid candidates for the
    audit; generation as a whole succeeds only if every target model
    yielded at least one parseable test.
    """
    raw_responses: dict[str, str] = {}
    invalid: list[InvalidCandidate] = []
    entries: list[ModelEntry] = []
    counts: dict[str, int] = {}
    for ctx in contexts:
        prompt = build_prompt(ctx)
        try:
            response = provider.generate(prompt, seed)
        except ProviderError as exc:
            raise GenerationError(
                f"provider failed for {ctx.model}: {exc}", raw_responses
            ) from exc
        raw_responses[ctx.model] = response
        outcome = parse_schema_document(response, origin="generated")
        if outcome.schema_file is None:
            first = (
                outcome.issues[0]
                if outcome.issues
                else ParseIssue("syntax", "response did not parse")
            )
            invalid.append(
                InvalidCandidate(
                    pseudo_id=f"{ctx.model}.response",
                    model=ctx.model,
                    raw=response,
                    issue=first,
                )
            )
            counts[ctx.model] = 0
            continue
        model_count = 0
        for entry in outcome.schema_file.models:
            if entry.name != ctx.model:
                for spec in entry.all_tests():
                    invalid.append(
                        InvalidCandidate(
                            pseudo_id=spec.id,
                            model=entry.name,
                            raw=spec,
                            issue=ParseIssue(
                                "unexpected-model",
                                f"response for {ctx.model} emitted tests for {entry.name}",
                            ),
                        )
                    )
                continue
            entries.append(entry)
            model_count = len(entry.all_tests())
        invalid.extend(outcome.invalid_tests)
        counts[ctx.model] = model_count

    empty = sorted(model for model, count in counts.items() if count == 0)
    if empty:
        raise GenerationError(
            f"no parseable tests generated for: {', '.join(empty)}", raw_responses
        )
    return GenerationResult(
        schema_file=SchemaFile(version=1, models=tuple(entries)),
        raw_responses=raw_responses,
        invalid_candidates=tuple(invalid),
        per_model_counts=counts,
    )


def make_provider(name: str, *, http_endpoint: str = "", http_model: str = "", profile: MockProfile | None = None):
    if name == "mock":
        return MockProvider(profile)
    if name == "http":
        if not http_endpoint or not http_model:
            raise GenerationError("http provider requires an endpoint and model name")
        return HttpProvider(http_endpoint, http_model)
    raise GenerationError(f"unknown provider {name!r}")


# -- usefulness audit ---------------------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    test_id: str
    model: str
    cls: str
    evidence: dict

    def to_json_dict(self) -> dict:
        return {
            "test_id": self.test_id,
            "model": self.model,
            "class": self.cls,
            "evidence": self.evidence,
        }


@dataclass(frozen=True)
class AuditReport:
    records: tuple[AuditRecord, ...]

    def counts(self) -> dict[str, int]:
        totals = {cls: 0 for cls in AUDIT_CLASSES}
        for record in self.records:
            totals[record.cls] += 1
        return totals

    def per_model(self) -> dict[str, dict[str, int]]:
        breakdown: dict[str, dict[str, int]] = {}
        for record in self.records:
            bucket = breakdown.setdefault(record.model, {cls: 0 for cls in AUDIT_CLASSES})
            bucket[record.cls] += 1
        return breakdown

    def to_json_dict(self) -> dict:
        return {
            "total": len(self.records),
            "counts": self.counts(),
            "per_model": self.per_model(),
            "records": [r.to_json_dict() for r in self.records],
        }


def audit_tests(
    generation: GenerationResult,
    merge: MergeResult,
    clean_report: TestRunReport,
    comparator: ComparatorReport,
) -> AuditReport:
    """Classify every generated item against the comparator evidence."""
    try:
        baseline_detected = set(comparator.matrix("manual_only").detected_ids)
        contributing = comparator.contributing_map("manual_llm")
    except KeyError as exc:
        raise AuditError(f"comparator detail missing condition: {exc}") from exc
    if not comparator.results:
        raise AuditError("comparator detail has no per-batch results")

    duplicate_ids = merge.duplicate_ids()
    merge_invalid = {c.pseudo_id for c in merge.invalid_candidates}

    records: list[AuditRecord] = []
    for candidate in generation.invalid_candidates:
        records.append(
            AuditRecord(
                test_id=candidate.pseudo_id,
                model=candidate.model,
                cls="invalid",
                evidence={"execution_error": str(candidate.issue) if candidate.issue else "rejected"},
            )
        )
    for spec in generation.schema_file.all_tests():
        clean_status = clean_report.status_of(spec.id)
        if spec.id in merge_invalid or clean_status in (None, "error"):
            records.append(
                AuditRecord(
                    test_id=spec.id,
                    model=spec.model,
                    cls="invalid",
                    evidence={"execution_error": f"clean-run status: {clean_status}"},
                )
            )
            continue
        if spec.id in duplicate_ids:
            records.append(
                AuditRecord(
                    test_id=spec.id,
                    model=spec.model,
                    cls="redundant",
                    evidence={"duplicate_of": spec.id},
                )
            )
            continue
        incremental = sorted(
            anomaly_id
            for anomaly_id, tests in contributing.items()
            if spec.id in tests and anomaly_id not in baseline_detected
        )
        if clean_status == "pass" and incremental:
            records.append(
                AuditRecord(
                    test_id=spec.id,
                    model=spec.model,
                    cls="useful",
                    evidence={"incremental_anomalies_detected": incremental},
                )
            )
            continue
        records.append(
            AuditRecord(
                test_id=spec.id,
                model=spec.model,
                cls="low_value",
                evidence={"none": "executes cleanly, no incremental detection"},
            )
        )
    return AuditReport(records=tuple(records))
