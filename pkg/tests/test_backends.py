import datetime as dt

import pytest

from dqflow.backends import (
    LocalBackend,
    WarehouseBackend,
    load_snapshot,
    migrate_tables,
    restore,
    snapshot,
    verify_against_snapshot,
)
from dqflow.engine import execute_tests
from dqflow.errors import BackendError, MigrationError, SnapshotError
from dqflow.fixtures_io import baseline_schema
from dqflow.models import CURATED_MODELS, MODEL_SCHEMAS, run_models
from dqflow.schema import Column, DATE, INTEGER, TEXT, TableSchema

SAMPLE = TableSchema(
    "events",
    (Column("event_id", INTEGER), Column("label", TEXT), Column("happened_on", DATE)),
    primary_key=("event_id",),
)
ROWS = [
    {"event_id": 1, "label": "alpha", "happened_on": dt.date(2024, 1, 5)},
    {"event_id": 2, "label": "beta", "happened_on": dt.date(2024, 2, 6)},
]


def test_local_round_trip(local_backend):
    local_backend.create_table(SAMPLE)
    assert local_backend.bulk_load("events", ROWS) == 2
    rows = local_backend.fetch_rows("events")
    assert rows == [
        {"event_id": 1, "label": "alpha", "happened_on": "2024-01-05"},
        {"event_id": 2, "label": "beta", "happened_on": "2024-02-06"},
    ]
    assert local_backend.row_count("events") == 2
    assert local_backend.list_tables() == ["events"]
    described = local_backend.describe("events")
    assert described == SAMPLE


def test_warehouse_quirks(warehouse_backend):
    warehouse_backend.create_table(SAMPLE)
    warehouse_backend.bulk_load("events", ROWS)
    described = warehouse_backend.describe("events")
    assert [c.name for c in described.columns] == ["EVENT_ID", "LABEL", "HAPPENED_ON"]
    # dates degrade to text in the warehouse
    assert described.column("happened_on").type.kind == "text"
    assert described.primary_key == ("EVENT_ID",)
    rows = warehouse_backend.fetch_rows("events")
    assert rows[0] == {"EVENT_ID": 1, "LABEL": "alpha", "HAPPENED_ON": "2024-01-05"}
    # physical table lives under the migrated namespace prefix
    assert warehouse_backend.physical_name("events") == "MIGRATED_EVENTS"
    raw = warehouse_backend.query("SELECT COUNT(*) FROM MIGRATED_EVENTS")
    assert raw[0][0] == 2


def test_read_your_writes(local_backend):
    local_backend.create_table(SAMPLE)
    local_backend.bulk_load("events", ROWS)
    local_backend.execute('UPDATE "events" SET "label" = ? WHERE "event_id" = ?', ("gamma", 1))
    rows = local_backend.fetch_rows("events")
    assert rows[0]["label"] == "gamma"


def test_describe_missing_table_raises(local_backend):
    with pytest.raises(BackendError, match="no such table"):
        local_backend.describe("ghost")


def test_snapshot_restore_round_trip(loaded_local, tmp_path):
    snap = snapshot(loaded_local, tmp_path / "local.db.clean")
    before = {m: loaded_local.table_checksum(m) for m in MODEL_SCHEMAS}
    restore(loaded_local, snap)
    after = {m: loaded_local.table_checksum(m) for m in MODEL_SCHEMAS}
    assert before == after
    assert verify_against_snapshot(loaded_local, snap)


def test_restore_undoes_mutation_so_tests_pass_again(loaded_local, tmp_path):
    snap = snapshot(loaded_local, tmp_path / "local.db.clean")
    loaded_local.execute('UPDATE "dim_teams" SET "team_id" = NULL WHERE "team_id" = 3')
    schema = baseline_schema()
    report = execute_tests(loaded_local, schema)
    assert report.status_of("dim_teams.team_id.not_null") == "fail"
    restore(loaded_local, snap)
    report = execute_tests(loaded_local, schema)
    assert report.status_of("dim_teams.team_id.not_null") == "pass"
    assert report.failed == 0


def test_restore_drops_tables_created_after_capture(loaded_local, tmp_path):
    snap = snapshot(loaded_local, tmp_path / "local.db.clean")
    loaded_local.create_table(SAMPLE)
    assert loaded_local.table_exists("events")
    restore(loaded_local, snap)
    assert not loaded_local.table_exists("events")


def test_restore_from_truncated_file_leaves_store_untouched(loaded_local, tmp_path):
    snap = snapshot(loaded_local, tmp_path / "local.db.clean")
    before = {m: loaded_local.table_checksum(m) for m in MODEL_SCHEMAS}
    (tmp_path / "local.db.clean").write_bytes(b"SQLite format 3\x00 garbage")
    with pytest.raises(SnapshotError):
        restore(loaded_local, snap)
    assert {m: loaded_local.table_checksum(m) for m in MODEL_SCHEMAS} == before


def test_snapshot_only_on_local_role(warehouse_backend, tmp_path):
    with pytest.raises(SnapshotError):
        snapshot(warehouse_backend, tmp_path / "w.clean")


def test_load_snapshot_round_trip(loaded_local, tmp_path):
    snap = snapshot(loaded_local, tmp_path / "local.db.clean")
    reloaded = load_snapshot(tmp_path / "local.db.clean")
    assert reloaded.captured_tables == snap.captured_tables
    with pytest.raises(SnapshotError):
        load_snapshot(tmp_path / "missing.clean")


def test_migrate_curated_tables(loaded_local, warehouse_backend):
    report = migrate_tables(
        loaded_local, warehouse_backend, list(CURATED_MODELS), allowed=CURATED_MODELS
    )
    assert report.ok
    loaded = {e.table: e.rows_loaded for e in report.entries}
    assert loaded == {"dim_teams": 20, "fct_matches": 100, "fct_training_dataset": 100}
    # count-query oracle on both stores
    for table in CURATED_MODELS:
        assert warehouse_backend.row_count(table) == loaded_local.row_count(table)
    assert report.target_namespace == "migrated"


def test_migrate_empty_list_is_a_noop(loaded_local, warehouse_backend):
    report = migrate_tables(loaded_local, warehouse_backend, [], allowed=CURATED_MODELS)
    assert report.entries == ()
    assert report.ok


def test_migrate_rejects_non_curated_tables(loaded_local, warehouse_backend):
    with pytest.raises(MigrationError, match="stg_matches"):
        migrate_tables(
            loaded_local, warehouse_backend, ["stg_matches"], allowed=CURATED_MODELS
        )


def test_migrate_records_failure_and_keeps_earlier_tables(loaded_local, warehouse_backend):
    report = migrate_tables(
        loaded_local,
        warehouse_backend,
        ["dim_teams", "fct_matches"],
        allowed=("dim_teams", "fct_matches", "ghost_table"),
    )
    assert report.ok
    broken = migrate_tables(
        loaded_local,
        warehouse_backend,
        ["ghost_table"],
        allowed=("dim_teams", "fct_matches", "ghost_table"),
    )
    assert not broken.ok
    assert broken.entries[0].status == "failed"
    # earlier migrations are still present
    assert warehouse_backend.row_count("dim_teams") == 20


def test_remigration_replaces_warehouse_copy(loaded_local, warehouse_backend):
    migrate_tables(loaded_local, warehouse_backend, ["dim_teams"], allowed=CURATED_MODELS)
    warehouse_backend.execute(
        'UPDATE "MIGRATED_DIM_TEAMS" SET "TEAM_NAME" = NULL WHERE "TEAM_ID" = 5'
    )
    migrate_tables(loaded_local, warehouse_backend, ["dim_teams"], allowed=CURATED_MODELS)
    rows = warehouse_backend.fetch_rows("dim_teams")
    assert all(r["TEAM_NAME"] is not None for r in rows)
