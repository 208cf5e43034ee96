"""Cross-store consistency verification for migrated tables.

Four checks per table: row counts, order-independent checksums, per-column
null summaries, and keyed row diffs over canonical encodings. A table is
MATCH iff all four agree; anything else, including a missing table on
either side, is MISMATCH rather than an exception.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .canonical import TableChecksum, checksum_rows, encode_row, encode_value
from .errors import EncodingError, InvalidParameterError
from .schema import TableSchema

DIFF_LIMIT = 100


def table_checksum(backend, table: str) -> TableChecksum:
    """Checksum a table on one store; encoding failures carry table context."""
    schema = backend.describe(table)
    rows = backend.fetch_rows(table)
    try:
        return checksum_rows(rows, schema)
    except EncodingError as exc:
        raise EncodingError(f"table {table}: {exc}") from None


def _get_ci(row: Mapping[str, object], column: str) -> object:
    wanted = column.lower()
    for key, value in row.items():
        if key.lower() == wanted:
            return value
    raise EncodingError(f"column {column!r} missing from row")


def _display_row(row: Mapping[str, object]) -> dict[str, object]:
    return {k.lower(): v for k, v in row.items()}


@dataclass(frozen=True)
class CheckPair:
    local: object
    remote: object

    @property
    def equal(self) -> bool:
        return self.local == self.remote


@dataclass(frozen=True)
class RowDiff:
    key: dict[str, object]
    local_row: dict[str, object] | None
    remote_row: dict[str, object] | None


@dataclass(frozen=True)
class TableValidationReport:
    table: str
    status: str  # MATCH | MISMATCH
    missing: tuple[str, ...] = ()  # stores the table is absent from
    row_count: CheckPair | None = None
    checksum: CheckPair | None = None
    null_summary: CheckPair | None = None  # maps: column -> null count
    row_diffs: tuple[RowDiff, ...] = ()
    truncated: bool = False

    def to_json_dict(self) -> dict:
        return {
            "table": self.table,
            "status": self.status,
            "missing": list(self.missing),
            "row_count": None
            if self.row_count is None
            else {"local": self.row_count.local, "remote": self.row_count.remote},
            "checksum": None
            if self.checksum is None
            else {"local": self.checksum.local, "remote": self.checksum.remote},
            "null_summary": None
            if self.null_summary is None
            else {
                column: {
                    "local": self.null_summary.local.get(column),
                    "remote": self.null_summary.remote.get(column),
                }
                for column in sorted(
                    set(self.null_summary.local) | set(self.null_summary.remote)
                )
            },
            "row_diffs": [
                {"key": d.key, "local_row": d.local_row, "remote_row": d.remote_row}
                for d in self.row_diffs
            ],
            "truncated": self.truncated,
        }


@dataclass(frozen=True)
class CrossStoreReport:
    reports: tuple[TableValidationReport, ...]
    status: str  # MATCH | MISMATCH
    vacuous: bool = False

    @property
    def matching(self) -> int:
        return sum(1 for r in self.reports if r.status == "MATCH")

    def to_json_dict(self) -> dict:
        return {
            "status": self.status,
            "vacuous": self.vacuous,
            "tables_matching": self.matching,
            "tables_total": len(self.reports),
            "tables": [r.to_json_dict() for r in self.reports],
        }


def _null_summary(rows: Sequence[Mapping[str, object]], schema: TableSchema) -> dict[str, int]:
    counts = {c.name.lower(): 0 for c in schema.columns}
    for row in rows:
        for key, value in row.items():
            if value is None and key.lower() in counts:
                counts[key.lower()] += 1
    return counts


def _key_of(row: Mapping[str, object], schema: TableSchema, key_columns: Sequence[str]) -> tuple[bytes, ...]:
    return tuple(
        encode_value(_get_ci(row, k), schema.column(k).type) for k in key_columns
    )


def _row_diffs(
    local_rows: Sequence[Mapping[str, object]],
    remote_rows: Sequence[Mapping[str, object]],
    schema: TableSchema,
    key_columns: Sequence[str],
) -> tuple[tuple[RowDiff, ...], bool]:
    """Keyed multiset diff; duplicate keys compare whole groups, never crash."""
    local_groups: dict[tuple[bytes, ...], list[Mapping[str, object]]] = {}
    remote_groups: dict[tuple[bytes, ...], list[Mapping[str, object]]] = {}
    for row in local_rows:
        local_groups.setdefault(_key_of(row, schema, key_columns), []).append(row)
    for row in remote_rows:
        remote_groups.setdefault(_key_of(row, schema, key_columns), []).append(row)

    diffs: list[RowDiff] = []
    truncated = False
    for key in sorted(set(local_groups) | set(remote_groups)):
        lgroup = local_groups.get(key, [])
        rgroup = remote_groups.get(key, [])
        lencoded = [(encode_row(r, schema), r) for r in lgroup]
        rencoded = [(encode_row(r, schema), r) for r in rgroup]
        lcounter = Counter(b for b, _ in lencoded)
        rcounter = Counter(b for b, _ in rencoded)
        if lcounter == rcounter:
            continue
        local_only = _take_excess(lencoded, lcounter - rcounter)
        remote_only = _take_excess(rencoded, rcounter - lcounter)
        sample = (lgroup or rgroup)[0]
        key_display = {k.lower(): _get_ci(sample, k) for k in key_columns}
        for i in range(max(len(local_only), len(remote_only))):
            if len(diffs) >= DIFF_LIMIT:
                truncated = True
                return tuple(diffs), truncated
            diffs.append(
                RowDiff(
                    key=key_display,
                    local_row=_display_row(local_only[i]) if i < len(local_only) else None,
                    remote_row=_display_row(remote_only[i]) if i < len(remote_only) else None,
                )
            )
    return tuple(diffs), truncated


def _take_excess(
    encoded_rows: Sequence[tuple[bytes, Mapping[str, object]]], excess: Counter
) -> list[Mapping[str, object]]:
    remaining = Counter(excess)
    taken = []
    for encoded, row in encoded_rows:
        if remaining[encoded] > 0:
            remaining[encoded] -= 1
            taken.append(row)
    return taken


def validate_table(
    local,
    warehouse,
    table: str,
    key_columns: Sequence[str] | None = None,
) -> TableValidationReport:
    """Run all four consistency checks for one migrated table."""
    missing = []
    if not local.table_exists(table):
        missing.append("local")
    if not warehouse.table_exists(table):
        missing.append("warehouse")
    if missing:
        return TableValidationReport(table=table, status="MISMATCH", missing=tuple(missing))

    schema = local.describe(table)
    keys = tuple(key_columns) if key_columns else tuple(schema.primary_key)
    if not keys:
        raise InvalidParameterError(f"table {table}: no key columns available for row diffs")
    for key in keys:
        if not schema.has_column(key):
            raise InvalidParameterError(f"table {table}: key column {key!r} not in schema")

    local_rows = local.fetch_rows(table)
    remote_rows = warehouse.fetch_rows(table)

    row_count = CheckPair(len(local_rows), len(remote_rows))
    try:
        checksum = CheckPair(
            checksum_rows(local_rows, schema).value,
            checksum_rows(remote_rows, schema).value,
        )
    except EncodingError as exc:
        raise EncodingError(f"table {table}: {exc}") from None
    null_summary = CheckPair(
        _null_summary(local_rows, schema), _null_summary(remote_rows, schema)
    )

    # When counts and checksums already agree the diff is vacuously empty.
    if row_count.equal and checksum.equal:
        row_diffs: tuple[RowDiff, ...] = ()
        truncated = False
    else:
        row_diffs, truncated = _row_diffs(local_rows, remote_rows, schema, keys)

    all_equal = (
        row_count.equal and checksum.equal and null_summary.equal and not row_diffs
    )
    return TableValidationReport(
        table=table,
        status="MATCH" if all_equal else "MISMATCH",
        row_count=row_count,
        checksum=checksum,
        null_summary=null_summary,
        row_diffs=row_diffs,
        truncated=truncated,
    )


def validate_all(
    local, warehouse, tables: Sequence[str], key_columns: Mapping[str, Sequence[str]] | None = None
) -> CrossStoreReport:
    """Validate every migrated table; overall MATCH iff each table matches."""
    key_columns = key_columns or {}
    reports = tuple(
        validate_table(local, warehouse, table, key_columns.get(table)) for table in tables
    )
    status = "MATCH" if all(r.status == "MATCH" for r in reports) else "MISMATCH"
    return CrossStoreReport(reports=reports, status=status, vacuous=not reports)
