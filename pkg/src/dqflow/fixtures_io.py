"""Access to the packaged fixture files: schema baselines and the anomaly catalog."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .anomalies import AnomalySpec, catalog_from_json
from .dsl import SchemaFile, parse_schema_file

BASELINE_SCHEMA = "baseline_schema.yml"
EXPANDED_SCHEMA = "expanded_schema.yml"
ANOMALY_CATALOG = "anomaly_catalog.json"


def fixture_text(name: str) -> str:
    return (resources.files("dqflow") / "fixtures" / name).read_text()


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("dqflow") / "fixtures" / name))


def baseline_schema() -> SchemaFile:
    return parse_schema_file(fixture_text(BASELINE_SCHEMA), origin="manual")


def expanded_schema() -> SchemaFile:
    return parse_schema_file(fixture_text(EXPANDED_SCHEMA), origin="expanded")


def default_catalog() -> tuple[AnomalySpec, ...]:
    return catalog_from_json(fixture_text(ANOMALY_CATALOG))
