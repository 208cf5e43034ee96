"""Anomaly catalog, mutation injection, and the three-condition comparator.

A catalog entry is a concrete mutation (NULL a cell, duplicate a row, or
overwrite a value) against a fixed row of a materialized table, plus a
detector signature: the set of (table, column-or-model-level, test kind)
slots whose failing tests count as having caught it. An anomaly is
DETECTED under a rule configuration iff some test matching its signature
fails after injection and passed on the clean pre-injection run.

Every experiment run restores the clean snapshot before injecting and
again after attribution, so no condition ever sees another's mutations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .backends import Snapshot, restore, verify_against_snapshot
from .dsl import SchemaFile
from .engine import execute_tests
from .errors import ExperimentError, InjectionError
from .models import MODEL_SCHEMAS

BATCHES = ("A", "B", "C")
CONDITIONS = ("manual_only", "manual_expanded", "manual_llm")
MUTATION_OPS = ("set_null", "duplicate_row", "set_value")


@dataclass(frozen=True)
class RowSelector:
    column: str
    value: object


@dataclass(frozen=True)
class Mutation:
    op: str
    selector: RowSelector
    column: str | None = None  # unused for duplicate_row
    value: object | None = None  # set_value only


@dataclass(frozen=True)
class SignatureSlot:
    table: str
    column: str | None  # None means model-level
    kind: str

    def as_tuple(self) -> tuple[str, str | None, str]:
        return (self.table, self.column.lower() if self.column else None, self.kind)


@dataclass(frozen=True)
class AnomalySpec:
    id: str
    batch: str
    table: str
    mutation: Mutation
    detector_signature: tuple[SignatureSlot, ...]

    def __post_init__(self) -> None:
        if self.batch not in BATCHES:
            raise ExperimentError(f"anomaly {self.id}: unknown batch {self.batch!r}")
        if self.mutation.op not in MUTATION_OPS:
            raise ExperimentError(f"anomaly {self.id}: unknown mutation {self.mutation.op!r}")
        if not self.detector_signature:
            raise ExperimentError(f"anomaly {self.id}: empty detector signature")


def catalog_from_json(text: str) -> tuple[AnomalySpec, ...]:
    """Parse and validate an anomaly catalog document."""
    payload = json.loads(text)
    specs = []
    seen = set()
    for entry in payload:
        spec = AnomalySpec(
            id=entry["id"],
            batch=entry["batch"],
            table=entry["table"],
            mutation=Mutation(
                op=entry["mutation"]["op"],
                selector=RowSelector(
                    column=entry["mutation"]["selector"]["column"],
                    value=entry["mutation"]["selector"]["value"],
                ),
                column=entry["mutation"].get("column"),
                value=entry["mutation"].get("value"),
            ),
            detector_signature=tuple(
                SignatureSlot(table=s["table"], column=s.get("column"), kind=s["kind"])
                for s in entry["detector_signature"]
            ),
        )
        if spec.id in seen:
            raise ExperimentError(f"duplicate anomaly id {spec.id}")
        seen.add(spec.id)
        if spec.table not in MODEL_SCHEMAS:
            raise ExperimentError(f"anomaly {spec.id}: unknown table {spec.table!r}")
        specs.append(spec)
    return tuple(specs)


def load_catalog(path: str | Path) -> tuple[AnomalySpec, ...]:
    return catalog_from_json(Path(path).read_text())


@dataclass(frozen=True)
class MutationReceipt:
    anomaly_id: str
    table: str
    op: str
    rows_affected: int
    changes: tuple[dict, ...]  # per affected row: selector, before, after


def inject(backend, spec: AnomalySpec) -> MutationReceipt:
    """Apply one mutation to exactly the selected rows of a clean store."""
    sel = spec.mutation.selector
    ref = backend.table_ref(spec.table)
    sel_col = f'"{sel.column}"'
    matched = backend.query(f"SELECT * FROM {ref} WHERE {sel_col} = ?", (sel.value,))
    if not matched:
        raise InjectionError(
            f"anomaly {spec.id}: selector {sel.column}={sel.value!r} matched no rows"
        )

    op = spec.mutation.op
    changes: list[dict] = []
    if op in ("set_null", "set_value"):
        target = spec.mutation.column
        if not target:
            raise InjectionError(f"anomaly {spec.id}: {op} requires a target column")
        new_value = None if op == "set_null" else spec.mutation.value
        before = backend.query(
            f"SELECT {quoted(target)} FROM {ref} WHERE {sel_col} = ?", (sel.value,)
        )
        affected = backend.execute(
            f"UPDATE {ref} SET {quoted(target)} = ? WHERE {sel_col} = ?",
            (new_value, sel.value),
        )
        for (old,) in before:
            changes.append(
                {"selector": {sel.column: sel.value}, "column": target, "before": old, "after": new_value}
            )
    else:  # duplicate_row
        affected = backend.execute(
            f"INSERT INTO {ref} SELECT * FROM {ref} WHERE {sel_col} = ?", (sel.value,)
        )
        changes.append(
            {"selector": {sel.column: sel.value}, "column": None, "before": "1 copy", "after": "2 copies"}
        )
    return MutationReceipt(
        anomaly_id=spec.id,
        table=spec.table,
        op=op,
        rows_affected=affected,
        changes=tuple(changes),
    )


def quoted(identifier: str) -> str:
    return '"' + identifier.replace('"', '""') + '"'


@dataclass(frozen=True)
class AnomalyOutcome:
    anomaly_id: str
    detected: bool
    contributing_tests: tuple[str, ...]


@dataclass(frozen=True)
class ConditionBatchResult:
    condition: str
    batch: str
    outcomes: tuple[AnomalyOutcome, ...]

    @property
    def detected_ids(self) -> tuple[str, ...]:
        return tuple(o.anomaly_id for o in self.outcomes if o.detected)

    @property
    def detected(self) -> int:
        return len(self.detected_ids)

    @property
    def total(self) -> int:
        return len(self.outcomes)


def _matching_tests(schema_file: SchemaFile, spec: AnomalySpec) -> list[str]:
    slots = {slot.as_tuple() for slot in spec.detector_signature}
    return [t.id for t in schema_file.all_tests() if t.signature() in slots]


def run_condition(
    condition: str,
    batch: str,
    backend,
    schema_file: SchemaFile,
    snapshot: Snapshot,
    catalog: Sequence[AnomalySpec],
) -> ConditionBatchResult:
    """Restore, inject one batch, execute the suite, and attribute failures.

    The store is restored again afterwards; a failed restore aborts the
    experiment rather than continuing on contaminated state.
    """
    batch_specs = sorted((s for s in catalog if s.batch == batch), key=lambda s: s.id)
    restore(backend, snapshot)
    clean_report = execute_tests(backend, schema_file)
    try:
        for spec in batch_specs:
            inject(backend, spec)
        post_report = execute_tests(backend, schema_file)
    finally:
        restore(backend, snapshot)

    outcomes = []
    for spec in batch_specs:
        contributing = tuple(
            test_id
            for test_id in _matching_tests(schema_file, spec)
            if post_report.status_of(test_id) == "fail"
            and clean_report.status_of(test_id) == "pass"
        )
        outcomes.append(
            AnomalyOutcome(
                anomaly_id=spec.id, detected=bool(contributing), contributing_tests=contributing
            )
        )
    return ConditionBatchResult(condition=condition, batch=batch, outcomes=tuple(outcomes))


@dataclass(frozen=True)
class DetectionMatrix:
    condition: str
    per_batch: tuple[tuple[str, int, int], ...]  # (batch, detected, injected)
    detected: int
    total: int
    detected_ids: tuple[str, ...]


@dataclass(frozen=True)
class ComparatorReport:
    matrices: tuple[DetectionMatrix, ...]
    results: tuple[ConditionBatchResult, ...]
    catalog_size: int
    absolute_gain_pp: float | None
    relative_improvement_pct: float | None

    def matrix(self, condition: str) -> DetectionMatrix:
        for m in self.matrices:
            if m.condition == condition:
                return m
        raise KeyError(condition)

    def result(self, condition: str, batch: str) -> ConditionBatchResult:
        for r in self.results:
            if r.condition == condition and r.batch == batch:
                return r
        raise KeyError((condition, batch))

    def contributing_map(self, condition: str) -> dict[str, tuple[str, ...]]:
        """anomaly id -> contributing test ids across all batches of one condition."""
        mapping: dict[str, tuple[str, ...]] = {}
        for r in self.results:
            if r.condition != condition:
                continue
            for outcome in r.outcomes:
                mapping[outcome.anomaly_id] = outcome.contributing_tests
        return mapping

    def to_json_dict(self) -> dict:
        conditions = {}
        for m in self.matrices:
            batches = {}
            for batch, detected, injected in m.per_batch:
                result = self.result(m.condition, batch)
                batches[batch] = {
                    "detected": detected,
                    "injected": injected,
                    "anomalies": {
                        o.anomaly_id: {
                            "detected": o.detected,
                            "contributing_tests": list(o.contributing_tests),
                        }
                        for o in result.outcomes
                    },
                }
            conditions[m.condition] = {
                "total": {"detected": m.detected, "injected": m.total},
                "detected_ids": list(m.detected_ids),
                "batches": batches,
            }
        return {
            "catalog_size": self.catalog_size,
            "conditions": conditions,
            "metrics": {
                "absolute_gain_pp": self.absolute_gain_pp,
                "relative_improvement_pct": self.relative_improvement_pct,
            },
        }


def comparator_report_from_json(payload: Mapping) -> ComparatorReport:
    """Rebuild a report from its persisted JSON form (audit and summary use this)."""
    matrices = []
    results = []
    for condition, body in payload["conditions"].items():
        per_batch = []
        detected_ids: list[str] = []
        for batch, batch_body in body["batches"].items():
            outcomes = tuple(
                AnomalyOutcome(
                    anomaly_id=aid,
                    detected=o["detected"],
                    contributing_tests=tuple(o["contributing_tests"]),
                )
                for aid, o in batch_body["anomalies"].items()
            )
            results.append(ConditionBatchResult(condition=condition, batch=batch, outcomes=outcomes))
            per_batch.append((batch, batch_body["detected"], batch_body["injected"]))
        detected_ids = list(body["detected_ids"])
        matrices.append(
            DetectionMatrix(
                condition=condition,
                per_batch=tuple(per_batch),
                detected=body["total"]["detected"],
                total=body["total"]["injected"],
                detected_ids=tuple(detected_ids),
            )
        )
    metrics = payload.get("metrics", {})
    return ComparatorReport(
        matrices=tuple(matrices),
        results=tuple(results),
        catalog_size=payload["catalog_size"],
        absolute_gain_pp=metrics.get("absolute_gain_pp"),
        relative_improvement_pct=metrics.get("relative_improvement_pct"),
    )


def run_comparator(
    backend,
    schemas: Mapping[str, SchemaFile],
    snapshot: Snapshot,
    catalog: Sequence[AnomalySpec],
) -> ComparatorReport:
    """Run all three conditions over all batches in fixed order."""
    missing = [c for c in CONDITIONS if c not in schemas]
    if missing:
        raise ExperimentError(f"missing schema fixtures for: {', '.join(missing)}")
    batches = [b for b in BATCHES if any(s.batch == b for s in catalog)]

    matrices = []
    results: list[ConditionBatchResult] = []
    for condition in CONDITIONS:
        detected_ids: list[str] = []
        per_batch = []
        for batch in batches:
            result = run_condition(condition, batch, backend, schemas[condition], snapshot, catalog)
            if not verify_against_snapshot(backend, snapshot):
                raise ExperimentError(
                    f"store left contaminated after {condition}/{batch}; aborting"
                )
            results.append(result)
            per_batch.append((batch, result.detected, result.total))
            detected_ids.extend(result.detected_ids)
        matrices.append(
            DetectionMatrix(
                condition=condition,
                per_batch=tuple(per_batch),
                detected=len(detected_ids),
                total=len(catalog),
                detected_ids=tuple(detected_ids),
            )
        )

    by_condition = {m.condition: m for m in matrices}
    baseline = by_condition["manual_only"].detected
    best = max(by_condition["manual_expanded"].detected, by_condition["manual_llm"].detected)
    total = len(catalog)
    absolute = round((best - baseline) / total * 100.0, 2) if total > 0 else None
    relative = round((best - baseline) / baseline * 100.0, 2) if baseline > 0 else None
    return ComparatorReport(
        matrices=tuple(matrices),
        results=tuple(results),
        catalog_size=total,
        absolute_gain_pp=absolute,
        relative_improvement_pct=relative,
    )
