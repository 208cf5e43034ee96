"""Eight-stage instrumented workflow, C5 stability protocol, and run artifacts.

Stage order is fixed and clean-run stages always precede mutation-based
experiments:

    1 reset_restore           reset the runtime log, restore the baseline schema
    2 ingest                  generate and persist the raw season
    3 model_run               materialize the four models, capture the clean snapshot
    4 llm_generation          extract contexts, call the provider, validate YAML
    5 merge_and_test          merge schemas (backup kept), execute the merged suite
    6 migration               export curated tables to the warehouse
    7 crossstore_validation   four-check consistency verdicts per table
    8 anomaly_experiments     three-condition comparator plus usefulness audit

A stage failure halts the run: the log records it and no later stage
executes. The research summary is compiled strictly from the persisted
artifact files, so recompiling it later reproduces the same document.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import time
import uuid
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import fixtures_io
from .anomalies import (
    AnomalySpec,
    ComparatorReport,
    load_catalog,
    run_comparator,
)
from .backends import (
    LocalBackend,
    Snapshot,
    WarehouseBackend,
    load_snapshot,
    migrate_tables,
    snapshot,
)
from .dsl import SchemaFile, load_schema_file, write_schema_file
from .engine import execute_tests, merge_schemas
from .errors import ConfigError, DQError, LockError, WorkflowError
from .models import CURATED_MODELS, run_models
from .season import generate_season, write_season
from .synth import (
    MockProfile,
    audit_tests,
    extract_context,
    generate_tests,
    make_provider,
)

STAGE_NAMES = (
    "reset_restore",
    "ingest",
    "model_run",
    "llm_generation",
    "merge_and_test",
    "migration",
    "crossstore_validation",
    "anomaly_experiments",
)

ARTIFACTS = {
    "runtime_log": "experiments/runtime_log.json",
    "run_config": "experiments/run_config.json",
    "model_run": "experiments/model_run.json",
    "llm_generation": "experiments/llm_generation.json",
    "clean_test_report": "experiments/clean_test_report.json",
    "migration_report": "experiments/migration_report.json",
    "crossstore_report": "experiments/crossstore_report.json",
    "anomaly_results": "experiments/anomaly_results.json",
    "usefulness_audit": "experiments/usefulness_audit.json",
    "research_summary": "experiments/research_summary.json",
    "c5_stability": "experiments/c5_stability.json",
    "raw_season": "data/raw_season.json",
    "active_schema": "schemas/active_schema.yml",
    "schema_backup": "schemas/schema_backup.yml",
    "generated_schema": "schemas/generated_schema.yml",
    "llm_raw_dir": "experiments/llm_raw",
}


@dataclass(frozen=True)
class Config:
    """Run configuration; file values are overridden by CLI flags."""

    seed: int = 42
    num_teams: int = 20
    num_matches: int = 100
    sample_n: int = 5
    provider: str = "mock"
    output_dir: Path = Path("dq_output")
    local_db: Path | None = None
    warehouse_db: Path | None = None
    warehouse_namespace: str = "migrated"
    anomaly_catalog: Path | None = None
    baseline_schema: Path | None = None
    expanded_schema: Path | None = None
    http_endpoint: str = ""
    http_model: str = ""
    mock_degenerate_seeds: tuple[int, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "num_teams": self.num_teams,
            "num_matches": self.num_matches,
            "sample_n": self.sample_n,
            "provider": self.provider,
            "warehouse_namespace": self.warehouse_namespace,
        }


_CONFIG_KEYS = {
    "seed",
    "num_teams",
    "num_matches",
    "sample_n",
    "provider",
    "output_dir",
    "backend",
    "anomaly_catalog",
    "schemas",
    "http",
    "mock",
}


def load_config(path: str | Path | None = None, **overrides) -> Config:
    """Load the YAML config file, apply overrides, and fill in defaults."""
    values: dict = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text())
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"{path}: unknown config keys: {', '.join(sorted(unknown))}")
        for key in ("seed", "num_teams", "num_matches", "sample_n", "provider"):
            if key in raw:
                values[key] = raw[key]
        if "output_dir" in raw:
            values["output_dir"] = Path(raw["output_dir"])
        backend = raw.get("backend", {})
        if "local_db" in backend:
            values["local_db"] = Path(backend["local_db"])
        if "warehouse_db" in backend:
            values["warehouse_db"] = Path(backend["warehouse_db"])
        if "warehouse_namespace" in backend:
            values["warehouse_namespace"] = backend["warehouse_namespace"]
        if "anomaly_catalog" in raw and raw["anomaly_catalog"]:
            values["anomaly_catalog"] = Path(raw["anomaly_catalog"])
        schemas = raw.get("schemas", {})
        if "baseline" in schemas:
            values["baseline_schema"] = Path(schemas["baseline"])
        if "expanded" in schemas:
            values["expanded_schema"] = Path(schemas["expanded"])
        http = raw.get("http", {})
        values["http_endpoint"] = http.get("endpoint", "")
        values["http_model"] = http.get("model", "")
        mock = raw.get("mock", {})
        if "degenerate_seeds" in mock:
            values["mock_degenerate_seeds"] = tuple(int(s) for s in mock["degenerate_seeds"])
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    config = Config(**values)
    if config.provider not in ("mock", "http"):
        raise ConfigError(f"unknown provider {config.provider!r}")
    return config


class Workspace:
    """Paths, backends, fixtures, and artifact IO for one output directory."""

    def __init__(self, config: Config) -> None:
        self.config = config
        self.output_dir = Path(config.output_dir)
        self.local_db = config.local_db or self.output_dir / "db" / "local.db"
        self.warehouse_db = config.warehouse_db or self.output_dir / "db" / "warehouse.db"
        self.snapshot_path = Path(str(self.local_db) + ".clean")
        self._local: LocalBackend | None = None
        self._warehouse: WarehouseBackend | None = None

    # -- paths ---------------------------------------------------------------

    def path(self, artifact: str) -> Path:
        return self.output_dir / ARTIFACTS[artifact]

    def ensure_dirs(self) -> None:
        for sub in ("db", "data", "schemas", "experiments", "experiments/llm_raw"):
            (self.output_dir / sub).mkdir(parents=True, exist_ok=True)

    # -- backends ------------------------------------------------------------

    def local(self) -> LocalBackend:
        if self._local is None:
            self._local = LocalBackend(self.local_db)
        return self._local

    def warehouse(self) -> WarehouseBackend:
        if self._warehouse is None:
            self._warehouse = WarehouseBackend(
                self.warehouse_db, namespace=self.config.warehouse_namespace
            )
        return self._warehouse

    def close(self) -> None:
        if self._local is not None:
            self._local.close()
            self._local = None
        if self._warehouse is not None:
            self._warehouse.close()
            self._warehouse = None

    def reset_backends(self) -> None:
        """Delete both store files for a from-scratch run."""
        self.close()
        for path in (self.local_db, self.warehouse_db):
            Path(path).unlink(missing_ok=True)

    def require_local(self) -> None:
        if not Path(self.local_db).exists():
            raise WorkflowError("setup", "local store not found; run run-models first")

    def require_warehouse(self) -> None:
        if not Path(self.warehouse_db).exists():
            raise WorkflowError("setup", "warehouse store not found; run migrate first")

    # -- fixtures ------------------------------------------------------------

    def baseline_schema(self) -> SchemaFile:
        if self.config.baseline_schema:
            return load_schema_file(self.config.baseline_schema, origin="manual")
        return fixtures_io.baseline_schema()

    def expanded_schema(self) -> SchemaFile:
        if self.config.expanded_schema:
            return load_schema_file(self.config.expanded_schema, origin="expanded")
        return fixtures_io.expanded_schema()

    def baseline_schema_text(self) -> str:
        if self.config.baseline_schema:
            return Path(self.config.baseline_schema).read_text()
        return fixtures_io.fixture_text(fixtures_io.BASELINE_SCHEMA)

    def catalog(self) -> tuple[AnomalySpec, ...]:
        if self.config.anomaly_catalog:
            return load_catalog(self.config.anomaly_catalog)
        return fixtures_io.default_catalog()

    def mock_profile(self) -> MockProfile:
        return MockProfile(degenerate_seeds=frozenset(self.config.mock_degenerate_seeds))

    def provider(self):
        return make_provider(
            self.config.provider,
            http_endpoint=self.config.http_endpoint,
            http_model=self.config.http_model,
            profile=self.mock_profile(),
        )

    # -- artifacts -----------------------------------------------------------

    def write_json(self, artifact: str, payload: dict) -> Path:
        path = self.path(artifact)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")
        return path

    def read_json(self, artifact: str) -> dict:
        return json.loads(self.path(artifact).read_text())

    # -- locking -------------------------------------------------------------

    @contextmanager
    def lock(self):
        self.output_dir.mkdir(parents=True, exist_ok=True)
        lock_path = self.output_dir / ".dqflow.lock"
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(
                f"another run holds {lock_path}; remove it if no run is active"
            ) from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            lock_path.unlink(missing_ok=True)


# -- runtime log --------------------------------------------------------------


@dataclass(frozen=True)
class StageRecord:
    ordinal: int
    name: str
    started_at: str
    duration_ms: float
    status: str  # succeeded | failed
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "ordinal": self.ordinal,
            "name": self.name,
            "started_at": self.started_at,
            "duration_ms": round(self.duration_ms, 3),
            "status": self.status,
            "error": self.error,
        }


@dataclass
class RunLog:
    run_id: str
    started_at: str
    stages: list[StageRecord] = field(default_factory=list)
    status: str = "running"  # running | succeeded | failed

    @classmethod
    def start(cls) -> "RunLog":
        return cls(
            run_id=uuid.uuid4().hex,
            started_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        )

    @property
    def total_duration_ms(self) -> float:
        return sum(s.duration_ms for s in self.stages)

    def to_json_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "started_at": self.started_at,
            "status": self.status,
            "total_duration_ms": round(self.total_duration_ms, 3),
            "stages": [s.to_json_dict() for s in self.stages],
        }


# -- stages -------------------------------------------------------------------


def _stage_reset_restore(ws: Workspace, state: dict) -> None:
    ws.reset_backends()
    ws.ensure_dirs()
    ws.path("runtime_log").unlink(missing_ok=True)
    ws.path("research_summary").unlink(missing_ok=True)
    active = ws.path("active_schema")
    active.write_text(ws.baseline_schema_text())
    ws.write_json("run_config", ws.config.to_json_dict())


def _stage_ingest(ws: Workspace, state: dict) -> None:
    raw = generate_season(ws.config.seed, ws.config.num_teams, ws.config.num_matches)
    write_season(raw, ws.path("raw_season"))
    state["raw"] = raw


def _stage_model_run(ws: Workspace, state: dict) -> None:
    report = run_models(ws.local(), state["raw"], full_refresh=True)
    state["snapshot"] = snapshot(ws.local(), ws.snapshot_path)
    state["model_report"] = report
    ws.write_json("model_run", report.to_json_dict())


def _stage_llm_generation(ws: Workspace, state: dict) -> None:
    contexts = [
        extract_context(ws.local(), model, ws.config.sample_n) for model in CURATED_MODELS
    ]
    provider = ws.provider()
    try:
        generation = generate_tests(provider, contexts, ws.config.seed)
    except DQError as exc:
        raw = getattr(exc, "raw_responses", {}) or {}
        _persist_raw_responses(ws, raw)
        raise
    _persist_raw_responses(ws, generation.raw_responses)
    write_schema_file(generation.schema_file, ws.path("generated_schema"))
    ws.write_json(
        "llm_generation",
        {
            "per_model_counts": generation.per_model_counts,
            "total_items": generation.total_items,
            "invalid_candidates": [
                {"pseudo_id": c.pseudo_id, "model": c.model, "issue": str(c.issue)}
                for c in generation.invalid_candidates
            ],
        },
    )
    state["generation"] = generation


def _persist_raw_responses(ws: Workspace, raw: dict) -> None:
    raw_dir = ws.path("llm_raw_dir")
    raw_dir.mkdir(parents=True, exist_ok=True)
    for model, text in raw.items():
        (raw_dir / f"{model}.yml").write_text(text)


def _stage_merge_and_test(ws: Workspace, state: dict) -> None:
    base = load_schema_file(ws.path("active_schema"), origin="manual")
    merge = merge_schemas(base, state["generation"].schema_file)
    write_schema_file(merge.backup, ws.path("schema_backup"))
    write_schema_file(merge.merged, ws.path("active_schema"))
    clean_report = execute_tests(ws.local(), merge.merged)
    ws.write_json("clean_test_report", clean_report.to_json_dict())
    state["merge"] = merge
    state["clean_report"] = clean_report


def _stage_migration(ws: Workspace, state: dict) -> None:
    report = migrate_tables(
        ws.local(), ws.warehouse(), list(CURATED_MODELS), allowed=CURATED_MODELS
    )
    ws.write_json("migration_report", report.to_json_dict())
    if not report.ok:
        failed = [e.table for e in report.entries if e.status != "loaded"]
        raise WorkflowError("migration", f"tables failed to load: {', '.join(failed)}")
    state["migration"] = report


def _stage_crossstore_validation(ws: Workspace, state: dict) -> None:
    from .crossstore import validate_all

    report = validate_all(ws.local(), ws.warehouse(), list(CURATED_MODELS))
    ws.write_json("crossstore_report", report.to_json_dict())
    state["crossstore"] = report


def _stage_anomaly_experiments(ws: Workspace, state: dict) -> None:
    schemas = {
        "manual_only": ws.baseline_schema(),
        "manual_expanded": ws.expanded_schema(),
        "manual_llm": state["merge"].merged,
    }
    comparator = run_comparator(ws.local(), schemas, state["snapshot"], ws.catalog())
    ws.write_json("anomaly_results", comparator.to_json_dict())
    audit = audit_tests(state["generation"], state["merge"], state["clean_report"], comparator)
    ws.write_json("usefulness_audit", audit.to_json_dict())
    state["comparator"] = comparator
    state["audit"] = audit


_STAGE_FUNCS = (
    _stage_reset_restore,
    _stage_ingest,
    _stage_model_run,
    _stage_llm_generation,
    _stage_merge_and_test,
    _stage_migration,
    _stage_crossstore_validation,
    _stage_anomaly_experiments,
)


def run_workflow(config: Config, on_stage=None) -> dict:
    """Execute all eight stages and return the compiled research summary.

    ``on_stage`` is called with each StageRecord as it completes.
    """
    ws = Workspace(config)
    with ws.lock():
        try:
            log = RunLog.start()
            state: dict = {}
            for ordinal, (name, func) in enumerate(zip(STAGE_NAMES, _STAGE_FUNCS), start=1):
                started_at = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
                t0 = time.perf_counter()
                try:
                    func(ws, state)
                except Exception as exc:
                    duration = max((time.perf_counter() - t0) * 1000.0, 0.001)
                    record = StageRecord(ordinal, name, started_at, duration, "failed", str(exc))
                    log.stages.append(record)
                    log.status = "failed"
                    ws.ensure_dirs()
                    ws.write_json("runtime_log", log.to_json_dict())
                    if on_stage is not None:
                        on_stage(record)
                    if isinstance(exc, WorkflowError):
                        raise
                    raise WorkflowError(name, str(exc)) from exc
                duration = max((time.perf_counter() - t0) * 1000.0, 0.001)
                record = StageRecord(ordinal, name, started_at, duration, "succeeded")
                log.stages.append(record)
                ws.write_json("runtime_log", log.to_json_dict())
                if on_stage is not None:
                    on_stage(record)
            log.status = "succeeded"
            ws.write_json("runtime_log", log.to_json_dict())
            summary = compile_summary(ws)
            ws.write_json("research_summary", summary)
            return summary
        finally:
            ws.close()


def compile_summary(ws: Workspace) -> dict:
    """Build the research summary strictly from persisted artifact files."""
    log = ws.read_json("runtime_log")
    run_config = ws.read_json("run_config")
    model_run = ws.read_json("model_run")
    generation = ws.read_json("llm_generation")
    audit = ws.read_json("usefulness_audit")
    anomaly = ws.read_json("anomaly_results")
    crossstore = ws.read_json("crossstore_report")
    migration = ws.read_json("migration_report")
    c5 = None
    if ws.path("c5_stability").exists():
        c5 = ws.read_json("c5_stability")

    conditions = {
        condition: {
            "total": body["total"],
            "batches": {
                batch: {"detected": b["detected"], "injected": b["injected"]}
                for batch, b in body["batches"].items()
            },
        }
        for condition, body in anomaly["conditions"].items()
    }
    return {
        "run_id": log["run_id"],
        "config": run_config,
        "model_row_counts": model_run["row_counts"],
        "generated_tests": {
            "total_items": generation["total_items"],
            "per_model_counts": generation["per_model_counts"],
            "invalid_candidates": len(generation["invalid_candidates"]),
        },
        "usefulness_audit": {
            "counts": audit["counts"],
            "per_model": audit["per_model"],
        },
        "anomaly_detection": {
            "conditions": conditions,
            "metrics": anomaly["metrics"],
        },
        "crossstore": {
            "status": crossstore["status"],
            "tables_matching": crossstore["tables_matching"],
            "tables_total": crossstore["tables_total"],
        },
        "migration": {
            "target_namespace": migration["target_namespace"],
            "tables": {
                t["table"]: t["rows_loaded"] for t in migration["tables"]
            },
        },
        "c5": c5,
        "runtime": {
            "stages": len(log["stages"]),
            "total_duration_ms": log["total_duration_ms"],
            "status": log["status"],
        },
        "artifacts": {
            key: ARTIFACTS[key]
            for key in (
                "runtime_log",
                "model_run",
                "llm_generation",
                "clean_test_report",
                "migration_report",
                "crossstore_report",
                "anomaly_results",
                "usefulness_audit",
                "raw_season",
                "active_schema",
                "schema_backup",
                "generated_schema",
            )
        },
    }


# -- C5 stability protocol ------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    mode: str  # frozen_schema | fresh_generation
    trials: tuple[dict, ...]  # per trial: condition -> [detected, injected] or error
    stable: bool
    deviating_trials: tuple[int, ...]  # 1-based indices

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "trials": list(self.trials),
            "stable": self.stable,
            "deviating_trials": list(self.deviating_trials),
        }


def _comparator_totals(report: ComparatorReport) -> dict:
    return {
        m.condition: [m.detected, m.total] for m in report.matrices
    }


def run_c5(
    config: Config,
    mode: str,
    trials: int = 5,
    trial_seeds: list[int] | None = None,
) -> StabilityReport:
    """Repeated-trial stability check over the same batches and conditions.

    frozen_schema merges one generated suite and reruns the comparator;
    fresh_generation regenerates tests before every comparator run. A trial
    that errors, or whose totals differ from the others, marks the report
    unstable and is identified by its 1-based index.
    """
    if mode not in ("frozen_schema", "fresh_generation"):
        raise ConfigError(f"unknown C5 mode {mode!r}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    seeds = list(trial_seeds) if trial_seeds else [config.seed] * trials
    if len(seeds) != trials:
        raise ConfigError(f"expected {trials} trial seeds, got {len(seeds)}")

    ws = Workspace(config)
    with ws.lock():
        try:
            ws.reset_backends()
            ws.ensure_dirs()
            raw = generate_season(config.seed, config.num_teams, config.num_matches)
            run_models(ws.local(), raw, full_refresh=True)
            snap = snapshot(ws.local(), ws.snapshot_path)
            base = ws.baseline_schema()
            expanded = ws.expanded_schema()
            catalog = ws.catalog()
            provider = ws.provider()
            contexts = [
                extract_context(ws.local(), model, config.sample_n) for model in CURATED_MODELS
            ]

            frozen_merged: SchemaFile | None = None
            if mode == "frozen_schema":
                generation = generate_tests(provider, contexts, config.seed)
                frozen_merged = merge_schemas(base, generation.schema_file).merged

            outcomes: list[dict] = []
            for index in range(trials):
                try:
                    if mode == "frozen_schema":
                        merged = frozen_merged
                    else:
                        generation = generate_tests(provider, contexts, seeds[index])
                        merged = merge_schemas(base, generation.schema_file).merged
                    report = run_comparator(
                        ws.local(),
                        {
                            "manual_only": base,
                            "manual_expanded": expanded,
                            "manual_llm": merged,
                        },
                        snap,
                        catalog,
                    )
                    outcomes.append(_comparator_totals(report))
                except DQError as exc:
                    outcomes.append({"error": str(exc)})

            reference = next((o for o in outcomes if "error" not in o), None)
            deviating = tuple(
                i + 1
                for i, outcome in enumerate(outcomes)
                if "error" in outcome or outcome != reference
            )
            stable = reference is not None and not deviating
            report = StabilityReport(
                mode=mode,
                trials=tuple(outcomes),
                stable=stable,
                deviating_trials=deviating,
            )
            _persist_c5(ws, report)
            return report
        finally:
            ws.close()


def _persist_c5(ws: Workspace, report: StabilityReport) -> None:
    payload = {}
    if ws.path("c5_stability").exists():
        payload = ws.read_json("c5_stability")
    payload[report.mode] = report.to_json_dict()
    ws.write_json("c5_stability", payload)


def load_clean_snapshot(ws: Workspace) -> Snapshot:
    return load_snapshot(ws.snapshot_path)
