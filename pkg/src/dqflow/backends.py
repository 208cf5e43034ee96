"""SQL-capable storage backends: a local analytical store and a simulated warehouse.

Both stores are embedded sqlite databases behind one uniform contract, so
every higher layer (test engine, cross-store validator, anomaly injector)
is written against the contract rather than an engine.

The warehouse deliberately drifts from the local store the way a cloud
warehouse drifts from an embedded engine: column names are uppercased,
date columns are stored as ISO-8601 text, integer columns are declared at
the widest integer width, and tables live under a migrated-namespace
prefix. Canonical encoding (see canonical.py) must erase all of it.

Tables are created without PRIMARY KEY or NOT NULL constraints on purpose:
anomaly experiments must be able to inject NULL keys and duplicate rows,
and the declarative test layer is the thing that should catch them.
"""

from __future__ import annotations

import datetime as dt
import json
import sqlite3
import time
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .canonical import TableChecksum, checksum_rows
from .errors import BackendError, BackendUnavailableError, MigrationError, SnapshotError
from .schema import Column, ColumnType, TableSchema

_META_TABLE = "_dq_schema"

_LOCAL_DDL_TYPES = {
    "integer": "INTEGER",
    "text": "TEXT",
    "date": "DATE",
    "timestamp": "TIMESTAMP",
    "boolean": "BOOLEAN",
}

_WAREHOUSE_DDL_TYPES = {
    "integer": "BIGINT",  # widest-integer reporting quirk
    "text": "TEXT",
    "date": "TEXT",  # ISO-8601 text storage quirk
    "timestamp": "TEXT",
    "boolean": "BOOLEAN",
}


def _schema_to_json(schema: TableSchema) -> str:
    return json.dumps(
        {
            "name": schema.name,
            "columns": [
                {
                    "name": c.name,
                    "kind": c.type.kind,
                    "precision": c.type.precision,
                    "scale": c.type.scale,
                    "nullable": c.nullable,
                }
                for c in schema.columns
            ],
            "primary_key": list(schema.primary_key),
        }
    )


def _schema_from_json(payload: str) -> TableSchema:
    data = json.loads(payload)
    return TableSchema(
        name=data["name"],
        columns=tuple(
            Column(
                name=c["name"],
                type=ColumnType(c["kind"], c.get("precision"), c.get("scale")),
                nullable=c.get("nullable", True),
            )
            for c in data["columns"]
        ),
        primary_key=tuple(data.get("primary_key", [])),
    )


def _to_storage(value: object) -> object:
    """Convert Python values to what sqlite can hold natively."""
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, dt.datetime):
        return value.isoformat(sep="T")
    if isinstance(value, dt.date):
        return value.isoformat()
    if isinstance(value, Decimal):
        return str(value)
    return value


class Backend:
    """Uniform store contract over one sqlite database file."""

    role = "local"

    def __init__(self, path: str | Path, namespace: str = "") -> None:
        self.path = Path(path)
        self.namespace = namespace
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._conn: sqlite3.Connection | None = sqlite3.connect(self.path)
        self._ensure_meta()

    # -- connection plumbing ------------------------------------------------

    @property
    def conn(self) -> sqlite3.Connection:
        if self._conn is None:
            raise BackendUnavailableError(f"backend at {self.path} is closed")
        return self._conn

    def close(self) -> None:
        if self._conn is not None:
            self._conn.commit()
            self._conn.close()
            self._conn = None

    def _ensure_meta(self) -> None:
        self.conn.execute(
            f"CREATE TABLE IF NOT EXISTS {_META_TABLE} "
            "(table_name TEXT PRIMARY KEY, schema_json TEXT NOT NULL)"
        )
        self.conn.commit()

    # -- naming -------------------------------------------------------------

    def physical_name(self, table: str) -> str:
        return table

    def table_ref(self, table: str) -> str:
        """Quoted identifier for use in generated SQL."""
        return '"' + self.physical_name(table).replace('"', '""') + '"'

    def _storage_column_name(self, name: str) -> str:
        return name

    # -- reads and writes ---------------------------------------------------

    def query(self, sql: str, params: Sequence[object] = ()) -> list[tuple]:
        if self._conn is None:
            raise BackendUnavailableError(f"backend at {self.path} is closed")
        try:
            cur = self.conn.execute(sql, tuple(params))
            return cur.fetchall()
        except sqlite3.ProgrammingError as exc:
            raise BackendUnavailableError(str(exc)) from exc
        except sqlite3.Error as exc:
            raise BackendError(str(exc)) from exc

    def execute(self, sql: str, params: Sequence[object] = ()) -> int:
        if self._conn is None:
            raise BackendUnavailableError(f"backend at {self.path} is closed")
        try:
            cur = self.conn.execute(sql, tuple(params))
            self.conn.commit()
            return cur.rowcount
        except sqlite3.ProgrammingError as exc:
            raise BackendUnavailableError(str(exc)) from exc
        except sqlite3.Error as exc:
            raise BackendError(str(exc)) from exc

    def create_table(self, schema: TableSchema, *, drop_existing: bool = False) -> None:
        ddl_types = self._ddl_types()
        if drop_existing:
            self.drop_table(schema.name)
        cols = ", ".join(
            f'"{self._storage_column_name(c.name)}" {self._ddl_type(c.type, ddl_types)}'
            for c in schema.columns
        )
        stored = self._stored_schema(schema)
        self.execute(f"CREATE TABLE {self.table_ref(schema.name)} ({cols})")
        self.execute(
            f"INSERT OR REPLACE INTO {_META_TABLE} (table_name, schema_json) VALUES (?, ?)",
            (schema.name.lower(), _schema_to_json(stored)),
        )

    def _ddl_types(self) -> Mapping[str, str]:
        return _LOCAL_DDL_TYPES

    @staticmethod
    def _ddl_type(ctype: ColumnType, ddl_types: Mapping[str, str]) -> str:
        if ctype.kind == "decimal":
            return f"DECIMAL({ctype.precision},{ctype.scale})"
        return ddl_types[ctype.kind]

    def _stored_schema(self, schema: TableSchema) -> TableSchema:
        """Schema as this store will later describe it."""
        return schema

    def bulk_load(self, table: str, rows: Iterable[Mapping[str, object]]) -> int:
        schema = self.describe(table)
        names = [c.name for c in schema.columns]
        placeholders = ", ".join("?" for _ in names)
        collist = ", ".join(f'"{n}"' for n in names)
        sql = f"INSERT INTO {self.table_ref(table)} ({collist}) VALUES ({placeholders})"
        count = 0
        try:
            for row in rows:
                by_lower = {k.lower(): v for k, v in row.items()}
                values = []
                for name in names:
                    if name.lower() not in by_lower:
                        raise BackendError(f"{table}: row missing column {name!r}")
                    values.append(_to_storage(by_lower[name.lower()]))
                self.conn.execute(sql, values)
                count += 1
            self.conn.commit()
        except sqlite3.Error as exc:
            self.conn.rollback()
            raise BackendError(f"bulk load into {table} failed: {exc}") from exc
        return count

    def fetch_rows(self, table: str) -> list[dict[str, object]]:
        """All rows as dicts keyed by the store's own column casing."""
        cur = self.conn.execute(f"SELECT * FROM {self.table_ref(table)}")
        names = [d[0] for d in cur.description]
        return [dict(zip(names, row)) for row in cur.fetchall()]

    def row_count(self, table: str) -> int:
        return int(self.query(f"SELECT COUNT(*) FROM {self.table_ref(table)}")[0][0])

    def list_tables(self) -> list[str]:
        rows = self.query(f"SELECT table_name FROM {_META_TABLE} ORDER BY table_name")
        return [r[0] for r in rows if self.table_exists(r[0])]

    def table_exists(self, table: str) -> bool:
        rows = self.query(
            "SELECT 1 FROM sqlite_master WHERE type = 'table' AND name = ?",
            (self.physical_name(table),),
        )
        return bool(rows)

    def describe(self, table: str) -> TableSchema:
        rows = self.query(
            f"SELECT schema_json FROM {_META_TABLE} WHERE table_name = ?",
            (table.lower(),),
        )
        if not rows or not self.table_exists(table):
            raise BackendError(f"no such table: {table}")
        return _schema_from_json(rows[0][0])

    def drop_table(self, table: str) -> None:
        self.execute(f"DROP TABLE IF EXISTS {self.table_ref(table)}")
        self.execute(f"DELETE FROM {_META_TABLE} WHERE table_name = ?", (table.lower(),))

    def table_checksum(self, table: str) -> TableChecksum:
        return checksum_rows(self.fetch_rows(table), self.describe(table))


class LocalBackend(Backend):
    """The embedded analytical store; the only store snapshots apply to."""

    role = "local"


class WarehouseBackend(Backend):
    """Simulated cloud warehouse with deliberate representational quirks."""

    role = "warehouse"

    def __init__(self, path: str | Path, namespace: str = "migrated") -> None:
        super().__init__(path, namespace=namespace)

    def physical_name(self, table: str) -> str:
        return f"{self.namespace}_{table}".upper()

    def _storage_column_name(self, name: str) -> str:
        return name.upper()

    def _ddl_types(self) -> Mapping[str, str]:
        return _WAREHOUSE_DDL_TYPES

    def _stored_schema(self, schema: TableSchema) -> TableSchema:
        # Dates degrade to text and names uppercase: that is what a
        # describe() against this store reports back.
        return TableSchema(
            name=schema.name,
            columns=tuple(
                Column(
                    name=c.name.upper(),
                    type=ColumnType("text") if c.type.kind in ("date", "timestamp") else c.type,
                    nullable=c.nullable,
                )
                for c in schema.columns
            ),
            primary_key=tuple(k.upper() for k in schema.primary_key),
        )


# -- snapshot / restore -----------------------------------------------------


@dataclass(frozen=True)
class Snapshot:
    """A bit-identical capture of the local store plus per-table digests."""

    path: Path
    captured_tables: tuple[tuple[str, int, int], ...]  # (table, row_count, checksum)


def snapshot(backend: Backend, path: str | Path) -> Snapshot:
    """Capture the local store to ``path`` (file copy via the sqlite backup API)."""
    if backend.role != "local":
        raise SnapshotError("snapshots are only taken of the local store")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    backend.conn.commit()
    if path.exists():
        path.unlink()
    dest = sqlite3.connect(path)
    try:
        backend.conn.backup(dest)
    finally:
        dest.close()
    captured = tuple(
        (table, *_table_digest(backend, table)) for table in backend.list_tables()
    )
    snap = Snapshot(path=path, captured_tables=captured)
    _write_snapshot_meta(snap)
    return snap


def _table_digest(backend: Backend, table: str) -> tuple[int, int]:
    checksum = backend.table_checksum(table)
    return checksum.row_count, checksum.value


def _write_snapshot_meta(snap: Snapshot) -> None:
    meta = {
        "path": str(snap.path),
        "captured_tables": [list(entry) for entry in snap.captured_tables],
    }
    Path(str(snap.path) + ".meta.json").write_text(json.dumps(meta, indent=2))


def load_snapshot(path: str | Path) -> Snapshot:
    """Reload a snapshot handle previously produced by ``snapshot()``."""
    path = Path(path)
    meta_path = Path(str(path) + ".meta.json")
    if not path.exists() or not meta_path.exists():
        raise SnapshotError(f"no snapshot at {path}")
    try:
        meta = json.loads(meta_path.read_text())
        captured = tuple(tuple(entry) for entry in meta["captured_tables"])
    except (ValueError, KeyError) as exc:
        raise SnapshotError(f"snapshot metadata at {meta_path} is corrupt: {exc}") from exc
    return Snapshot(path=path, captured_tables=captured)  # type: ignore[arg-type]


def restore(backend: Backend, snap: Snapshot) -> None:
    """Reinstate a captured state; validates the snapshot before touching the store."""
    if backend.role != "local":
        raise SnapshotError("snapshots are only restored into the local store")
    if not snap.path.exists():
        raise SnapshotError(f"snapshot file missing: {snap.path}")

    source = sqlite3.connect(f"file:{snap.path}?mode=ro", uri=True)
    try:
        # Validate the file fully before the live store is modified.
        try:
            verdict = source.execute("PRAGMA integrity_check").fetchone()
        except sqlite3.Error as exc:
            raise SnapshotError(f"snapshot file unreadable: {exc}") from exc
        if verdict is None or verdict[0] != "ok":
            raise SnapshotError(f"snapshot file failed integrity check: {snap.path}")

        backend.conn.commit()
        try:
            source.backup(backend.conn)
        except sqlite3.Error as exc:
            raise SnapshotError(f"restore failed: {exc}") from exc
    finally:
        source.close()

    for table, row_count, checksum in snap.captured_tables:
        actual = backend.table_checksum(table)
        if (actual.row_count, actual.value) != (row_count, checksum):
            raise SnapshotError(
                f"restore verification failed for {table}: "
                f"expected ({row_count}, {checksum}), got ({actual.row_count}, {actual.value})"
            )


def verify_against_snapshot(backend: Backend, snap: Snapshot) -> bool:
    """Whether every captured table currently matches its captured digest."""
    for table, row_count, checksum in snap.captured_tables:
        if not backend.table_exists(table):
            return False
        actual = backend.table_checksum(table)
        if (actual.row_count, actual.value) != (row_count, checksum):
            return False
    return True


# -- migration --------------------------------------------------------------


@dataclass(frozen=True)
class MigrationEntry:
    table: str
    rows_exported: int
    rows_loaded: int
    duration_ms: float
    status: str  # loaded | failed
    error: str | None = None


@dataclass(frozen=True)
class MigrationReport:
    entries: tuple[MigrationEntry, ...]
    target_namespace: str

    @property
    def ok(self) -> bool:
        return all(e.status == "loaded" for e in self.entries)

    def to_json_dict(self) -> dict:
        return {
            "target_namespace": self.target_namespace,
            "tables": [
                {
                    "table": e.table,
                    "rows_exported": e.rows_exported,
                    "rows_loaded": e.rows_loaded,
                    "duration_ms": round(e.duration_ms, 3),
                    "status": e.status,
                    "error": e.error,
                }
                for e in self.entries
            ],
        }


def migrate_tables(
    local: Backend, warehouse: Backend, tables: Sequence[str], *, allowed: Sequence[str]
) -> MigrationReport:
    """Recreate each curated table in the warehouse namespace and load its rows.

    Tables already migrated in this call stay put when a later one fails;
    the failure is recorded on its entry and surfaced via ``report.ok``.
    """
    unknown = [t for t in tables if t not in allowed]
    if unknown:
        raise MigrationError(f"not in the curated set: {', '.join(unknown)}")
    entries: list[MigrationEntry] = []
    for table in tables:
        started = time.perf_counter()
        try:
            schema = local.describe(table)
            rows = local.fetch_rows(table)
            warehouse.create_table(schema, drop_existing=True)
            loaded = warehouse.bulk_load(table, rows)
            if loaded != len(rows):
                raise MigrationError(
                    f"{table}: exported {len(rows)} rows but loaded {loaded}"
                )
            entries.append(
                MigrationEntry(
                    table=table,
                    rows_exported=len(rows),
                    rows_loaded=loaded,
                    duration_ms=(time.perf_counter() - started) * 1000.0,
                    status="loaded",
                )
            )
        except BackendError as exc:
            entries.append(
                MigrationEntry(
                    table=table,
                    rows_exported=0,
                    rows_loaded=0,
                    duration_ms=(time.perf_counter() - started) * 1000.0,
                    status="failed",
                    error=str(exc),
                )
            )
    return MigrationReport(entries=tuple(entries), target_namespace=warehouse.namespace)
