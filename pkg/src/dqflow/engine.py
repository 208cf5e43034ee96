"""Test compilation, suite execution, and schema merging.

Every test compiles to a failing-rows query: the test passes iff the
query returns zero rows. NULL handling follows the dbt conventions —
unique and accepted_values ignore NULLs (not_null is the dedicated NULL
detector), relationship ignores NULL children, and an expression test
fails any row whose predicate is not true (false or NULL).
"""

from __future__ import annotations

import datetime as dt
import time
from dataclasses import dataclass
from typing import Mapping

from .dsl import (
    ColumnEntry,
    InvalidCandidate,
    ModelEntry,
    ParseIssue,
    SchemaFile,
    TestSpec,
)
from .errors import BackendError, BackendUnavailableError, CompilationError
from .models import MODEL_SCHEMAS
from .schema import TableSchema


@dataclass(frozen=True)
class CompiledTest:
    test_id: str
    sql: str
    params: tuple[object, ...] = ()


def _quote(identifier: str) -> str:
    return '"' + identifier.replace('"', '""') + '"'


def compile_test(
    spec: TestSpec,
    schema_file: SchemaFile,
    backend=None,
    *,
    known_models: Mapping[str, TableSchema] | None = None,
) -> CompiledTest:
    """Compile one spec to its failing-rows query for the given backend dialect."""
    known = MODEL_SCHEMAS if known_models is None else known_models
    table_schema = known.get(spec.model)
    if table_schema is None:
        raise CompilationError(f"{spec.id}: unknown model {spec.model!r}")
    if schema_file.model(spec.model) is None:
        raise CompilationError(f"{spec.id}: model {spec.model!r} not in schema file")
    if spec.column is not None and not table_schema.has_column(spec.column):
        raise CompilationError(f"{spec.id}: unknown column {spec.column!r}")

    def ref(table: str) -> str:
        return backend.table_ref(table) if backend is not None else _quote(table)

    table = ref(spec.model)
    kind = spec.kind
    if kind.name == "not_null":
        col = _quote(spec.column)
        return CompiledTest(spec.id, f"SELECT * FROM {table} WHERE {col} IS NULL")
    if kind.name == "unique":
        col = _quote(spec.column)
        return CompiledTest(
            spec.id,
            f"SELECT {col} AS value, COUNT(*) AS occurrences FROM {table} "
            f"WHERE {col} IS NOT NULL GROUP BY {col} HAVING COUNT(*) > 1",
        )
    if kind.name == "accepted_values":
        col = _quote(spec.column)
        values = tuple(kind.values or ())
        if not values:
            raise CompilationError(f"{spec.id}: accepted_values has no values")
        placeholders = ", ".join("?" for _ in values)
        return CompiledTest(
            spec.id,
            f"SELECT * FROM {table} WHERE {col} IS NOT NULL AND {col} NOT IN ({placeholders})",
            values,
        )
    if kind.name == "relationship":
        foreign = known.get(kind.to_model or "")
        if foreign is None or not foreign.has_column(kind.to_column or ""):
            raise CompilationError(
                f"{spec.id}: relationship target {kind.to_model}.{kind.to_column} does not resolve"
            )
        col = _quote(spec.column)
        fcol = _quote(kind.to_column)
        ftable = ref(kind.to_model)
        return CompiledTest(
            spec.id,
            f"SELECT * FROM {table} WHERE {col} IS NOT NULL AND {col} NOT IN "
            f"(SELECT {fcol} FROM {ftable} WHERE {fcol} IS NOT NULL)",
        )
    if kind.name == "expression":
        predicate = kind.predicate or ""
        if not predicate.strip():
            raise CompilationError(f"{spec.id}: empty predicate")
        return CompiledTest(
            spec.id,
            f"SELECT * FROM {table} WHERE NOT ({predicate}) OR ({predicate}) IS NULL",
        )
    raise CompilationError(f"{spec.id}: unknown test kind {kind.name!r}")


@dataclass(frozen=True)
class TestResult:
    test_id: str
    status: str  # pass | fail | error
    failing_rows: int | None
    message: str
    duration_ms: float

    def to_json_dict(self) -> dict:
        payload = {
            "test_id": self.test_id,
            "status": self.status,
            "message": self.message,
            "duration_ms": round(self.duration_ms, 3),
        }
        if self.status != "error":
            payload["failing_rows"] = self.failing_rows
        return payload


@dataclass(frozen=True)
class TestRunReport:
    results: tuple[TestResult, ...]
    started_at: str
    duration_ms: float

    @property
    def passed(self) -> int:
        return sum(1 for r in self.results if r.status == "pass")

    @property
    def failed(self) -> int:
        return sum(1 for r in self.results if r.status == "fail")

    @property
    def errored(self) -> int:
        return sum(1 for r in self.results if r.status == "error")

    def status_of(self, test_id: str) -> str | None:
        for r in self.results:
            if r.test_id == test_id:
                return r.status
        return None

    def failing_ids(self) -> set[str]:
        return {r.test_id for r in self.results if r.status == "fail"}

    def to_json_dict(self) -> dict:
        return {
            "started_at": self.started_at,
            "duration_ms": round(self.duration_ms, 3),
            "passed": self.passed,
            "failed": self.failed,
            "errored": self.errored,
            "results": [r.to_json_dict() for r in self.results],
        }


def execute_tests(backend, schema_file: SchemaFile) -> TestRunReport:
    """Run every test in the file against the backend, in stable id order.

    A missing table or a bad compilation yields a per-test error result and
    the run continues; a dead backend connection aborts the whole run.
    """
    started_at = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    run_start = time.perf_counter()
    results: list[TestResult] = []
    for spec in sorted(schema_file.all_tests(), key=lambda s: s.id):
        test_start = time.perf_counter()
        try:
            compiled = compile_test(spec, schema_file, backend)
            rows = backend.query(compiled.sql, compiled.params)
            failing = len(rows)
            results.append(
                TestResult(
                    test_id=spec.id,
                    status="pass" if failing == 0 else "fail",
                    failing_rows=failing,
                    message="" if failing == 0 else f"{failing} failing rows",
                    duration_ms=(time.perf_counter() - test_start) * 1000.0,
                )
            )
        except BackendUnavailableError:
            raise
        except (BackendError, CompilationError) as exc:
            results.append(
                TestResult(
                    test_id=spec.id,
                    status="error",
                    failing_rows=None,
                    message=str(exc),
                    duration_ms=(time.perf_counter() - test_start) * 1000.0,
                )
            )
    return TestRunReport(
        results=tuple(results),
        started_at=started_at,
        duration_ms=(time.perf_counter() - run_start) * 1000.0,
    )


def run_report_from_json(payload: Mapping) -> TestRunReport:
    """Rebuild a report from its persisted JSON form."""
    results = tuple(
        TestResult(
            test_id=r["test_id"],
            status=r["status"],
            failing_rows=r.get("failing_rows"),
            message=r.get("message", ""),
            duration_ms=r.get("duration_ms", 0.0),
        )
        for r in payload["results"]
    )
    return TestRunReport(
        results=results,
        started_at=payload.get("started_at", ""),
        duration_ms=payload.get("duration_ms", 0.0),
    )


@dataclass(frozen=True)
class DuplicateRecord:
    test_id: str
    duplicate_of: str
    scope: str  # base | generated


@dataclass(frozen=True)
class MergeResult:
    merged: SchemaFile
    backup: SchemaFile
    duplicates: tuple[DuplicateRecord, ...]
    invalid_candidates: tuple[InvalidCandidate, ...]
    added_ids: tuple[str, ...]

    def duplicate_ids(self) -> set[str]:
        return {d.test_id for d in self.duplicates}


def merge_schemas(
    base: SchemaFile,
    generated: SchemaFile,
    *,
    known_models: Mapping[str, TableSchema] | None = None,
) -> MergeResult:
    """Fold generated tests into the base file, deduplicating semantically.

    The returned backup is the untouched base; merging the same generated
    file repeatedly adds each non-duplicate test exactly once. Generated
    tests that no longer resolve against the model schemas are excluded
    and recorded as invalid candidates.
    """
    known = MODEL_SCHEMAS if known_models is None else known_models
    base_ids = base.test_ids()
    duplicates: list[DuplicateRecord] = []
    invalid: list[InvalidCandidate] = []
    added: list[str] = []

    # Mutable mirror of the base structure, keyed case-insensitively.
    model_order = [m.name for m in base.models]
    columns_by_model: dict[str, list[str]] = {
        m.name.lower(): [c.name for c in m.columns] for m in base.models
    }
    column_tests: dict[tuple[str, str], list[TestSpec]] = {}
    model_tests: dict[str, list[TestSpec]] = {}
    for m in base.models:
        model_tests[m.name.lower()] = list(m.tests)
        for c in m.columns:
            column_tests[(m.name.lower(), c.name.lower())] = list(c.tests)

    seen = set(base_ids)
    for spec in generated.all_tests():
        table_schema = known.get(spec.model)
        if table_schema is None or (
            spec.column is not None and not table_schema.has_column(spec.column)
        ):
            invalid.append(
                InvalidCandidate(
                    pseudo_id=spec.id,
                    model=spec.model,
                    raw=spec,
                    issue=ParseIssue(
                        "unknown-column",
                        f"{spec.id} does not resolve against the model schemas",
                    ),
                )
            )
            continue
        if spec.id in seen:
            scope = "base" if spec.id in base_ids else "generated"
            duplicates.append(DuplicateRecord(spec.id, spec.id, scope))
            continue
        seen.add(spec.id)
        added.append(spec.id)
        mkey = spec.model.lower()
        if mkey not in model_tests:
            model_order.append(spec.model)
            columns_by_model[mkey] = []
            model_tests[mkey] = []
        if spec.column is None:
            model_tests[mkey].append(spec)
        else:
            ckey = (mkey, spec.column.lower())
            if ckey not in column_tests:
                columns_by_model[mkey].append(spec.column)
                column_tests[ckey] = []
            column_tests[ckey].append(spec)

    merged_models = []
    for model_name in model_order:
        mkey = model_name.lower()
        merged_models.append(
            ModelEntry(
                name=model_name,
                columns=tuple(
                    ColumnEntry(
                        name=cname, tests=tuple(column_tests.get((mkey, cname.lower()), ()))
                    )
                    for cname in columns_by_model[mkey]
                ),
                tests=tuple(model_tests[mkey]),
            )
        )
    merged = SchemaFile(version=base.version + 1, models=tuple(merged_models))
    return MergeResult(
        merged=merged,
        backup=base,
        duplicates=tuple(duplicates),
        invalid_candidates=tuple(invalid),
        added_ids=tuple(added),
    )
