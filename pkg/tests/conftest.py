"""Shared fixtures: seed-42 season, loaded stores, and the full pipeline state."""

from __future__ import annotations

import pytest

from dqflow.backends import LocalBackend, WarehouseBackend, migrate_tables, snapshot
from dqflow.engine import execute_tests, merge_schemas
from dqflow.fixtures_io import baseline_schema, default_catalog, expanded_schema
from dqflow.models import CURATED_MODELS, run_models
from dqflow.season import generate_season
from dqflow.synth import MockProvider, extract_context, generate_tests

SEED = 42
NUM_TEAMS = 20
NUM_MATCHES = 100


@pytest.fixture(scope="session")
def season42():
    return generate_season(SEED, NUM_TEAMS, NUM_MATCHES)


@pytest.fixture()
def local_backend(tmp_path):
    backend = LocalBackend(tmp_path / "local.db")
    yield backend
    backend.close()


@pytest.fixture()
def warehouse_backend(tmp_path):
    backend = WarehouseBackend(tmp_path / "warehouse.db")
    yield backend
    backend.close()


@pytest.fixture()
def loaded_local(tmp_path, season42):
    """A local store with all four models materialized from the seed-42 season."""
    backend = LocalBackend(tmp_path / "local.db")
    run_models(backend, season42, full_refresh=True)
    yield backend
    backend.close()


class PipelineState:
    """Everything a clean full run produces, shared by read-only tests.

    Tests that mutate the stores must restore the snapshot before yielding
    control back (the comparator does this on its own).
    """

    def __init__(self, root, season):
        self.root = root
        self.raw = season
        self.local = LocalBackend(root / "local.db")
        self.warehouse = WarehouseBackend(root / "warehouse.db")
        self.model_report = run_models(self.local, season, full_refresh=True)
        self.snapshot = snapshot(self.local, root / "local.db.clean")
        self.baseline = baseline_schema()
        self.expanded = expanded_schema()
        self.catalog = default_catalog()
        self.contexts = [
            extract_context(self.local, model, 5) for model in CURATED_MODELS
        ]
        self.generation = generate_tests(MockProvider(), self.contexts, seed=SEED)
        self.merge = merge_schemas(self.baseline, self.generation.schema_file)
        self.clean_report = execute_tests(self.local, self.merge.merged)
        self.migration = migrate_tables(
            self.local, self.warehouse, list(CURATED_MODELS), allowed=CURATED_MODELS
        )

    @property
    def schemas(self):
        return {
            "manual_only": self.baseline,
            "manual_expanded": self.expanded,
            "manual_llm": self.merge.merged,
        }

    def close(self):
        self.local.close()
        self.warehouse.close()


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory, season42):
    state = PipelineState(tmp_path_factory.mktemp("pipeline"), season42)
    yield state
    state.close()
