"""Declarative data-test DSL: YAML schema files, test specs, parse and serialize.

The document shape is a strict subset of a dbt schema file:

    version: 1
    models:
      - name: dim_teams
        columns:
          - name: team_id
            tests:
              - not_null
              - unique
          - name: team_name
            tests:
              - accepted_values: { values: ["Arsenal", "Chelsea"] }
              - relationship: { to: dim_teams, field: team_id }
        tests:
          - expression: { predicate: "team_id > 0" }

Five test kinds exist. not_null and unique are bare strings; the other
three carry parameters. expression tests are model-level only and are
restricted to a single boolean predicate over the model's own columns.
Test identifiers are content-derived, so reparsing, merging, and reruns
are order-insensitive.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .errors import SchemaParseError
from .models import MODEL_SCHEMAS
from .schema import TableSchema

TEST_KIND_NAMES = ("not_null", "unique", "accepted_values", "relationship", "expression")
ORIGINS = ("manual", "expanded", "generated")

# Words allowed to appear in an expression predicate besides column names.
_PREDICATE_KEYWORDS = frozenset(
    """
    and or not is null in between like case when then else end true false
    coalesce nullif cast as integer text boolean abs length lower upper trim round
    """.split()
)
_PREDICATE_FORBIDDEN = frozenset(
    "select from where insert update delete drop create alter attach pragma union".split()
)
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_STRING_LITERAL_RE = re.compile(r"'(?:[^']|'')*'")


@dataclass(frozen=True)
class TestKind:
    """A test kind plus its parameters; unused parameter slots stay None."""

    name: str
    values: tuple[object, ...] | None = None  # accepted_values
    to_model: str | None = None  # relationship
    to_column: str | None = None
    predicate: str | None = None  # expression

    def normalized_params(self) -> dict:
        if self.name == "accepted_values":
            unique = list(dict.fromkeys(self.values or ()))
            return {"values": sorted(unique, key=lambda v: json.dumps(v))}
        if self.name == "relationship":
            return {"to": (self.to_model or "").lower(), "field": (self.to_column or "").lower()}
        if self.name == "expression":
            return {"predicate": " ".join((self.predicate or "").split())}
        return {}


@dataclass(frozen=True)
class TestSpec:
    """One attached test; the id encodes its semantic identity."""

    model: str
    column: str | None
    kind: TestKind
    origin: str = field(default="manual", compare=False)

    @property
    def id(self) -> str:
        parts = [self.model]
        if self.column is not None:
            parts.append(self.column)
        parts.append(self.kind.name)
        params = self.kind.normalized_params()
        if params:
            digest = hashlib.sha1(
                json.dumps(params, sort_keys=True, separators=(",", ":")).encode()
            ).hexdigest()[:8]
            parts.append(digest)
        return ".".join(parts)

    def signature(self) -> tuple[str, str | None, str]:
        """(table, column-or-None, kind) slot used for anomaly attribution."""
        return (self.model, self.column.lower() if self.column else None, self.kind.name)


@dataclass(frozen=True)
class ColumnEntry:
    name: str
    tests: tuple[TestSpec, ...] = ()


@dataclass(frozen=True)
class ModelEntry:
    name: str
    columns: tuple[ColumnEntry, ...] = ()
    tests: tuple[TestSpec, ...] = ()  # model-level expression tests

    def all_tests(self) -> list[TestSpec]:
        specs = [t for c in self.columns for t in c.tests]
        specs.extend(self.tests)
        return specs


@dataclass(frozen=True)
class SchemaFile:
    version: int
    models: tuple[ModelEntry, ...] = ()

    def all_tests(self) -> list[TestSpec]:
        return [t for m in self.models for t in m.all_tests()]

    def test_ids(self) -> set[str]:
        return {t.id for t in self.all_tests()}

    def model(self, name: str) -> ModelEntry | None:
        wanted = name.lower()
        for m in self.models:
            if m.name.lower() == wanted:
                return m
        return None


@dataclass(frozen=True)
class ParseIssue:
    code: str  # syntax | unknown-key | malformed-version | unknown-model |
    #            duplicate-model | unknown-column | unknown-test-kind |
    #            malformed-params | unknown-reference | invalid-placement |
    #            invalid-predicate | duplicate-test | duplicate-column
    message: str
    location: str = ""

    def __str__(self) -> str:
        where = f" at {self.location}" if self.location else ""
        return f"[{self.code}]{where}: {self.message}"


@dataclass(frozen=True)
class InvalidCandidate:
    """A test item that failed validation; kept so audits can count it."""

    pseudo_id: str
    model: str
    raw: object
    issue: ParseIssue


@dataclass
class ParsedDocument:
    schema_file: SchemaFile | None
    issues: list[ParseIssue]
    invalid_tests: list[InvalidCandidate]


def parse_schema_file(
    text: str,
    *,
    origin: str = "manual",
    known_models: Mapping[str, TableSchema] | None = None,
) -> SchemaFile:
    """Strict parse: any structural or per-test problem raises SchemaParseError."""
    outcome = parse_schema_document(text, origin=origin, known_models=known_models)
    issues = list(outcome.issues)
    issues.extend(c.issue for c in outcome.invalid_tests)
    if issues or outcome.schema_file is None:
        raise SchemaParseError(issues or [ParseIssue("syntax", "empty document")])
    return outcome.schema_file


def parse_schema_document(
    text: str,
    *,
    origin: str = "manual",
    known_models: Mapping[str, TableSchema] | None = None,
) -> ParsedDocument:
    """Lenient parse: structural problems void the document, per-test problems
    become invalid candidates while the rest of the file still parses."""
    known = dict(MODEL_SCHEMAS if known_models is None else known_models)
    if origin not in ORIGINS:
        raise ValueError(f"unknown origin {origin!r}")

    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        return ParsedDocument(None, [ParseIssue("syntax", f"not valid YAML: {exc}")], [])
    if data is None:
        return ParsedDocument(None, [ParseIssue("syntax", "empty document")], [])
    if not isinstance(data, dict):
        return ParsedDocument(None, [ParseIssue("syntax", "top level must be a mapping")], [])

    issues: list[ParseIssue] = []
    invalid: list[InvalidCandidate] = []

    for key in data:
        if key not in ("version", "models"):
            issues.append(ParseIssue("unknown-key", f"unknown top-level key {key!r}"))
    version = data.get("version")
    if not isinstance(version, int) or isinstance(version, bool):
        issues.append(ParseIssue("malformed-version", "version must be an integer"))
        version = 0
    raw_models = data.get("models", [])
    if not isinstance(raw_models, list):
        issues.append(ParseIssue("syntax", "models must be a list"))
        raw_models = []

    models: list[ModelEntry] = []
    seen_models: set[str] = set()
    seen_ids: set[str] = set()
    for index, raw_model in enumerate(raw_models):
        location = f"models[{index}]"
        if not isinstance(raw_model, dict):
            issues.append(ParseIssue("syntax", "model entry must be a mapping", location))
            continue
        for key in raw_model:
            if key not in ("name", "columns", "tests"):
                issues.append(ParseIssue("unknown-key", f"unknown model key {key!r}", location))
        name = raw_model.get("name")
        if not isinstance(name, str) or not name:
            issues.append(ParseIssue("syntax", "model needs a name", location))
            continue
        if name.lower() in seen_models:
            issues.append(ParseIssue("duplicate-model", f"model {name!r} declared twice", location))
            continue
        seen_models.add(name.lower())
        if name not in known:
            issues.append(ParseIssue("unknown-model", f"unknown model {name!r}", location))
            continue
        table = known[name]
        entry = _parse_model_entry(
            name, raw_model, table, known, origin, location, issues, invalid, seen_ids
        )
        models.append(entry)

    if issues:
        return ParsedDocument(None, issues, invalid)
    return ParsedDocument(SchemaFile(version=version, models=tuple(models)), [], invalid)


def _parse_model_entry(
    name: str,
    raw_model: dict,
    table: TableSchema,
    known: Mapping[str, TableSchema],
    origin: str,
    location: str,
    issues: list[ParseIssue],
    invalid: list[InvalidCandidate],
    seen_ids: set[str],
) -> ModelEntry:
    columns: list[ColumnEntry] = []
    seen_columns: set[str] = set()
    raw_columns = raw_model.get("columns", [])
    if not isinstance(raw_columns, list):
        issues.append(ParseIssue("syntax", "columns must be a list", location))
        raw_columns = []
    for cindex, raw_column in enumerate(raw_columns):
        cloc = f"{location}.columns[{cindex}]"
        if not isinstance(raw_column, dict):
            issues.append(ParseIssue("syntax", "column entry must be a mapping", cloc))
            continue
        for key in raw_column:
            if key not in ("name", "tests"):
                issues.append(ParseIssue("unknown-key", f"unknown column key {key!r}", cloc))
        cname = raw_column.get("name")
        if not isinstance(cname, str) or not cname:
            issues.append(ParseIssue("syntax", "column needs a name", cloc))
            continue
        if cname.lower() in seen_columns:
            issues.append(ParseIssue("duplicate-column", f"column {cname!r} declared twice", cloc))
            continue
        seen_columns.add(cname.lower())
        if not table.has_column(cname):
            invalid.append(
                InvalidCandidate(
                    pseudo_id=f"{name}.{cname}",
                    model=name,
                    raw=raw_column,
                    issue=ParseIssue(
                        "unknown-column", f"model {name!r} has no column {cname!r}", cloc
                    ),
                )
            )
            continue
        tests = _parse_column_tests(
            name, cname, raw_column.get("tests", []), known, origin, cloc, issues, invalid, seen_ids
        )
        columns.append(ColumnEntry(name=cname, tests=tuple(tests)))

    model_tests = _parse_model_tests(
        name, raw_model.get("tests", []), table, origin, location, issues, invalid, seen_ids
    )
    return ModelEntry(name=name, columns=tuple(columns), tests=tuple(model_tests))


def _parse_column_tests(
    model: str,
    column: str,
    raw_tests: object,
    known: Mapping[str, TableSchema],
    origin: str,
    location: str,
    issues: list[ParseIssue],
    invalid: list[InvalidCandidate],
    seen_ids: set[str],
) -> list[TestSpec]:
    specs: list[TestSpec] = []
    if not isinstance(raw_tests, list):
        issues.append(ParseIssue("syntax", "tests must be a list", location))
        return specs
    for tindex, raw_test in enumerate(raw_tests):
        tloc = f"{location}.tests[{tindex}]"
        kind, issue = _parse_test_item(raw_test, model, column, known, tloc)
        if issue is not None:
            invalid.append(
                InvalidCandidate(
                    pseudo_id=f"{model}.{column}.item{tindex}", model=model, raw=raw_test, issue=issue
                )
            )
            continue
        spec = TestSpec(model=model, column=column, kind=kind, origin=origin)
        if spec.id in seen_ids:
            invalid.append(
                InvalidCandidate(
                    pseudo_id=spec.id,
                    model=model,
                    raw=raw_test,
                    issue=ParseIssue("duplicate-test", f"test {spec.id} appears twice", tloc),
                )
            )
            continue
        seen_ids.add(spec.id)
        specs.append(spec)
    return specs


def _parse_model_tests(
    model: str,
    raw_tests: object,
    table: TableSchema,
    origin: str,
    location: str,
    issues: list[ParseIssue],
    invalid: list[InvalidCandidate],
    seen_ids: set[str],
) -> list[TestSpec]:
    specs: list[TestSpec] = []
    if not isinstance(raw_tests, list):
        issues.append(ParseIssue("syntax", "tests must be a list", location))
        return specs
    for tindex, raw_test in enumerate(raw_tests):
        tloc = f"{location}.tests[{tindex}]"
        issue = None
        kind = None
        if not isinstance(raw_test, dict) or len(raw_test) != 1:
            issue = ParseIssue(
                "malformed-params", "model-level test must be a single-key mapping", tloc
            )
        else:
            kname, params = next(iter(raw_test.items()))
            if kname != "expression":
                code = "invalid-placement" if kname in TEST_KIND_NAMES else "unknown-test-kind"
                issue = ParseIssue(code, f"{kname!r} is not a model-level test kind", tloc)
            else:
                kind, issue = _parse_expression_params(params, table, tloc)
        if issue is not None:
            invalid.append(
                InvalidCandidate(
                    pseudo_id=f"{model}.expression.item{tindex}",
                    model=model,
                    raw=raw_test,
                    issue=issue,
                )
            )
            continue
        spec = TestSpec(model=model, column=None, kind=kind, origin=origin)
        if spec.id in seen_ids:
            invalid.append(
                InvalidCandidate(
                    pseudo_id=spec.id,
                    model=model,
                    raw=raw_test,
                    issue=ParseIssue("duplicate-test", f"test {spec.id} appears twice", tloc),
                )
            )
            continue
        seen_ids.add(spec.id)
        specs.append(spec)
    return specs


def _parse_test_item(
    raw_test: object,
    model: str,
    column: str,
    known: Mapping[str, TableSchema],
    location: str,
) -> tuple[TestKind | None, ParseIssue | None]:
    if isinstance(raw_test, str):
        if raw_test in ("not_null", "unique"):
            return TestKind(raw_test), None
        if raw_test in TEST_KIND_NAMES:
            return None, ParseIssue(
                "malformed-params", f"{raw_test!r} requires parameters", location
            )
        return None, ParseIssue("unknown-test-kind", f"unknown test kind {raw_test!r}", location)
    if not isinstance(raw_test, dict) or len(raw_test) != 1:
        return None, ParseIssue("malformed-params", "test must be a string or single-key mapping", location)
    kname, params = next(iter(raw_test.items()))
    if kname not in TEST_KIND_NAMES:
        return None, ParseIssue("unknown-test-kind", f"unknown test kind {kname!r}", location)
    if kname == "expression":
        return None, ParseIssue(
            "invalid-placement", "expression tests attach at model level, not to a column", location
        )
    if kname in ("not_null", "unique"):
        if params in (None, {}):
            return TestKind(kname), None
        return None, ParseIssue("malformed-params", f"{kname!r} takes no parameters", location)
    if not isinstance(params, dict):
        return None, ParseIssue("malformed-params", f"{kname!r} parameters must be a mapping", location)
    if kname == "accepted_values":
        extra = set(params) - {"values"}
        values = params.get("values")
        if extra or not isinstance(values, list) or not values:
            return None, ParseIssue(
                "malformed-params", "accepted_values requires a non-empty values list", location
            )
        if any(isinstance(v, (dict, list)) for v in values):
            return None, ParseIssue(
                "malformed-params", "accepted_values entries must be scalars", location
            )
        return TestKind(kname, values=tuple(values)), None
    # relationship
    extra = set(params) - {"to", "field"}
    to_model = params.get("to")
    to_column = params.get("field")
    if extra or not isinstance(to_model, str) or not isinstance(to_column, str):
        return None, ParseIssue(
            "malformed-params", "relationship requires 'to' and 'field'", location
        )
    target = known.get(to_model)
    if target is None or not target.has_column(to_column):
        return None, ParseIssue(
            "unknown-reference",
            f"relationship target {to_model}.{to_column} does not resolve",
            location,
        )
    return TestKind(kname, to_model=to_model, to_column=to_column), None


def _parse_expression_params(
    params: object, table: TableSchema, location: str
) -> tuple[TestKind | None, ParseIssue | None]:
    if not isinstance(params, dict) or set(params) != {"predicate"}:
        return None, ParseIssue(
            "malformed-params", "expression requires exactly a 'predicate'", location
        )
    predicate = params["predicate"]
    if not isinstance(predicate, str) or not predicate.strip():
        return None, ParseIssue("malformed-params", "predicate must be a non-empty string", location)
    if ";" in predicate:
        return None, ParseIssue("invalid-predicate", "predicate must be a single expression", location)
    stripped = _STRING_LITERAL_RE.sub("", predicate)
    for token in _IDENT_RE.findall(stripped):
        lowered = token.lower()
        if lowered in _PREDICATE_FORBIDDEN:
            return None, ParseIssue(
                "invalid-predicate", f"predicate may not use {token!r}", location
            )
        if lowered in _PREDICATE_KEYWORDS:
            continue
        if not table.has_column(token):
            return None, ParseIssue(
                "unknown-column", f"predicate references unknown column {token!r}", location
            )
    return TestKind("expression", predicate=predicate), None


# -- serialization ------------------------------------------------------------


def _render_test(spec: TestSpec) -> object:
    kind = spec.kind
    if kind.name in ("not_null", "unique"):
        return kind.name
    if kind.name == "accepted_values":
        return {"accepted_values": {"values": list(kind.values or ())}}
    if kind.name == "relationship":
        return {"relationship": {"to": kind.to_model, "field": kind.to_column}}
    return {"expression": {"predicate": kind.predicate}}


def serialize_schema_file(schema_file: SchemaFile) -> str:
    """Canonical YAML rendering; equal SchemaFiles serialize to equal bytes."""
    models = []
    for m in schema_file.models:
        entry: dict = {"name": m.name}
        if m.columns:
            entry["columns"] = [
                {"name": c.name, "tests": [_render_test(t) for t in c.tests]}
                if c.tests
                else {"name": c.name}
                for c in m.columns
            ]
        if m.tests:
            entry["tests"] = [_render_test(t) for t in m.tests]
        models.append(entry)
    data = {"version": schema_file.version, "models": models}
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False, width=1000)


def load_schema_file(path: str | Path, *, origin: str = "manual") -> SchemaFile:
    return parse_schema_file(Path(path).read_text(), origin=origin)


def write_schema_file(schema_file: SchemaFile, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(serialize_schema_file(schema_file))
