"""Command-line interface.

Exit codes: 0 on success, 1 when validation mismatches or detection
regresses (the data is wrong), 2 on operational failure (the run itself
could not complete).
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click

from .anomalies import comparator_report_from_json, run_comparator
from .backends import migrate_tables, restore
from .crossstore import validate_all
from .dsl import InvalidCandidate, ParseIssue, load_schema_file
from .engine import execute_tests, merge_schemas, run_report_from_json
from .errors import DQError
from .models import CURATED_MODELS, run_models
from .season import generate_season, read_season, write_season
from .synth import GenerationResult, audit_tests
from .workflow import (
    Config,
    Workspace,
    compile_summary,
    load_clean_snapshot,
    load_config,
    run_c5,
    run_workflow,
)
from .workflow import _stage_llm_generation  # shared by the generate-tests command

EXIT_VALIDATION = 1
EXIT_OPERATIONAL = 2


def _die(message: str, code: int = EXIT_OPERATIONAL) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="YAML config file.")
@click.option("--seed", type=int, default=None, help="Season and generation seed.")
@click.option("--provider", type=click.Choice(["mock", "http"]), default=None, help="Test-generation provider.")
@click.option("--output-dir", type=click.Path(file_okay=False), default=None, help="Run artifact directory.")
@click.pass_context
def main(ctx, config_path, seed, provider, output_dir):
    """Multi-layer data-quality validation workflow."""
    overrides = {"seed": seed, "provider": provider}
    if output_dir is not None:
        overrides["output_dir"] = Path(output_dir)
    try:
        ctx.obj = load_config(config_path, **overrides)
    except DQError as exc:
        _die(str(exc))


@main.command("full-run")
@click.pass_obj
def full_run(cfg: Config):
    """Run the complete eight-stage workflow."""
    def echo_stage(record):
        click.echo(f"stage {record.ordinal}/8 {record.name}: {record.status} ({record.duration_ms:.1f} ms)")

    try:
        summary = run_workflow(cfg, on_stage=echo_stage)
    except DQError as exc:
        _die(str(exc))
    _echo_summary(summary)
    conditions = summary["anomaly_detection"]["conditions"]
    baseline = conditions["manual_only"]["total"]["detected"]
    regression = any(
        conditions[c]["total"]["detected"] < baseline
        for c in ("manual_expanded", "manual_llm")
    )
    if summary["crossstore"]["status"] != "MATCH" or regression:
        sys.exit(EXIT_VALIDATION)


def _echo_summary(summary: dict) -> None:
    rows = " ".join(f"{k}={v}" for k, v in summary["model_row_counts"].items())
    click.echo(f"model rows: {rows}")
    gen = summary["generated_tests"]
    per_model = " ".join(f"{k}={v}" for k, v in gen["per_model_counts"].items())
    click.echo(f"generated tests: {gen['total_items']} ({per_model})")
    counts = summary["usefulness_audit"]["counts"]
    click.echo(
        "audit: useful={useful} redundant={redundant} low_value={low_value} invalid={invalid}".format(**counts)
    )
    conditions = summary["anomaly_detection"]["conditions"]
    metrics = summary["anomaly_detection"]["metrics"]
    detection = " ".join(
        f"{name}={body['total']['detected']}/{body['total']['injected']}"
        for name, body in conditions.items()
    )
    click.echo(
        f"detection: {detection} (+{metrics['absolute_gain_pp']} pp, +{metrics['relative_improvement_pct']}%)"
    )
    cross = summary["crossstore"]
    click.echo(f"cross-store: {cross['status']} {cross['tables_matching']}/{cross['tables_total']}")
    click.echo(f"runtime: {summary['runtime']['stages']} stages, {summary['runtime']['total_duration_ms']:.1f} ms")


@main.command()
@click.pass_obj
def ingest(cfg: Config):
    """Generate the raw season and persist the ingest artifact."""
    ws = Workspace(cfg)
    try:
        ws.ensure_dirs()
        raw = generate_season(cfg.seed, cfg.num_teams, cfg.num_matches)
        path = write_season(raw, ws.path("raw_season"))
    except DQError as exc:
        _die(str(exc))
    click.echo(f"wrote {len(raw)} matches to {path}")


@main.command("run-models")
@click.pass_obj
def run_models_cmd(cfg: Config):
    """Materialize the four models and capture the clean snapshot."""
    ws = Workspace(cfg)
    try:
        with ws.lock():
            ws.ensure_dirs()
            season_path = ws.path("raw_season")
            if season_path.exists():
                raw = read_season(season_path)
            else:
                raw = generate_season(cfg.seed, cfg.num_teams, cfg.num_matches)
                write_season(raw, season_path)
            report = run_models(ws.local(), raw, full_refresh=True)
            ws.write_json("model_run", report.to_json_dict())
            from .backends import snapshot as take_snapshot

            take_snapshot(ws.local(), ws.snapshot_path)
    except DQError as exc:
        _die(str(exc))
    finally:
        ws.close()
    for model, count in report.row_counts.items():
        click.echo(f"{model}: {count} rows")
    click.echo(f"snapshot: {ws.snapshot_path}")


@main.command()
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Schema file to execute (default: active schema).")
@click.pass_obj
def test(cfg: Config, schema_path):
    """Execute the declarative test suite against the local store."""
    ws = Workspace(cfg)
    try:
        ws.require_local()
        if schema_path is not None:
            schema = load_schema_file(schema_path)
        elif ws.path("active_schema").exists():
            schema = load_schema_file(ws.path("active_schema"))
        else:
            schema = ws.baseline_schema()
        report = execute_tests(ws.local(), schema)
    except DQError as exc:
        _die(str(exc))
    finally:
        ws.close()
    for result in report.results:
        if result.status != "pass":
            click.echo(f"{result.status.upper()}: {result.test_id} ({result.message})")
    click.echo(f"tests: {report.passed} passed, {report.failed} failed, {report.errored} errored")
    if report.failed or report.errored:
        sys.exit(EXIT_VALIDATION)


@main.command("generate-tests")
@click.pass_obj
def generate_tests_cmd(cfg: Config):
    """Extract contexts, call the provider, and persist the generated schema."""
    ws = Workspace(cfg)
    try:
        ws.require_local()
        ws.ensure_dirs()
        state: dict = {}
        _stage_llm_generation(ws, state)
    except DQError as exc:
        _die(str(exc))
    finally:
        ws.close()
    generation = state["generation"]
    per_model = " ".join(f"{k}={v}" for k, v in generation.per_model_counts.items())
    click.echo(f"generated {generation.total_items} test items ({per_model})")
    click.echo(f"schema: {ws.path('generated_schema')}")


@main.command()
@click.pass_obj
def migrate(cfg: Config):
    """Export the curated tables to the warehouse namespace."""
    ws = Workspace(cfg)
    try:
        ws.require_local()
        with ws.lock():
            report = migrate_tables(
                ws.local(), ws.warehouse(), list(CURATED_MODELS), allowed=CURATED_MODELS
            )
            ws.ensure_dirs()
            ws.write_json("migration_report", report.to_json_dict())
    except DQError as exc:
        _die(str(exc))
    finally:
        ws.close()
    for entry in report.entries:
        click.echo(f"{entry.table}: {entry.status} ({entry.rows_loaded} rows)")
    if not report.ok:
        _die("migration failed for one or more tables")


@main.command()
@click.pass_obj
def validate(cfg: Config):
    """Verify cross-store consistency for the migrated tables."""
    ws = Workspace(cfg)
    try:
        ws.require_local()
        ws.require_warehouse()
        report = validate_all(ws.local(), ws.warehouse(), list(CURATED_MODELS))
        ws.ensure_dirs()
        ws.write_json("crossstore_report", report.to_json_dict())
    except DQError as exc:
        _die(str(exc))
    finally:
        ws.close()
    for table_report in report.reports:
        click.echo(f"{table_report.table}: {table_report.status}")
    click.echo(f"overall: {report.status} ({report.matching}/{len(report.reports)})")
    if report.status != "MATCH":
        sys.exit(EXIT_VALIDATION)


@main.command()
@click.option("--catalog", "catalog_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Alternate anomaly catalog (JSON).")
@click.pass_obj
def experiment(cfg: Config, catalog_path):
    """Run the three-condition anomaly comparator."""
    if catalog_path is not None:
        cfg = replace(cfg, anomaly_catalog=Path(catalog_path))
    ws = Workspace(cfg)
    try:
        ws.require_local()
        snap = load_clean_snapshot(ws)
        generated_path = ws.path("generated_schema")
        if not generated_path.exists():
            _die("no generated schema found; run generate-tests first")
        base = ws.baseline_schema()
        merged = merge_schemas(base, load_schema_file(generated_path, origin="generated")).merged
        schemas = {
            "manual_only": base,
            "manual_expanded": ws.expanded_schema(),
            "manual_llm": merged,
        }
        with ws.lock():
            ws.ensure_dirs()
            restore(ws.local(), snap)
            clean_report = execute_tests(ws.local(), merged)
            ws.write_json("clean_test_report", clean_report.to_json_dict())
            report = run_comparator(ws.local(), schemas, snap, ws.catalog())
            ws.write_json("anomaly_results", report.to_json_dict())
    except DQError as exc:
        _die(str(exc))
    finally:
        ws.close()
    baseline_detected = None
    for matrix in report.matrices:
        batches = " ".join(f"{b}={d}/{t}" for b, d, t in matrix.per_batch)
        click.echo(f"{matrix.condition}: {matrix.detected}/{matrix.total} ({batches})")
        if matrix.condition == "manual_only":
            baseline_detected = matrix.detected
    click.echo(
        f"gain: +{report.absolute_gain_pp} pp, improvement: +{report.relative_improvement_pct}%"
    )
    regression = any(
        m.detected < baseline_detected
        for m in report.matrices
        if m.condition != "manual_only"
    )
    if regression:
        sys.exit(EXIT_VALIDATION)


@main.command()
@click.pass_obj
def audit(cfg: Config):
    """Classify generated tests from the persisted experiment artifacts."""
    ws = Workspace(cfg)
    try:
        for artifact in ("anomaly_results", "clean_test_report", "llm_generation"):
            if not ws.path(artifact).exists():
                _die(f"missing artifact {ws.path(artifact)}; run the experiment first")
        if not ws.path("generated_schema").exists():
            _die("no generated schema found; run generate-tests first")
        generated = load_schema_file(ws.path("generated_schema"), origin="generated")
        generation_meta = ws.read_json("llm_generation")
        generation = GenerationResult(
            schema_file=generated,
            raw_responses={},
            invalid_candidates=tuple(
                InvalidCandidate(
                    pseudo_id=c["pseudo_id"],
                    model=c["model"],
                    raw=None,
                    issue=ParseIssue("recorded", c["issue"]),
                )
                for c in generation_meta.get("invalid_candidates", [])
            ),
            per_model_counts=generation_meta.get("per_model_counts", {}),
        )
        merge = merge_schemas(ws.baseline_schema(), generated)
        clean_report = run_report_from_json(ws.read_json("clean_test_report"))
        comparator = comparator_report_from_json(ws.read_json("anomaly_results"))
        audit_report = audit_tests(generation, merge, clean_report, comparator)
        ws.write_json("usefulness_audit", audit_report.to_json_dict())
    except DQError as exc:
        _die(str(exc))
    finally:
        ws.close()
    counts = audit_report.counts()
    click.echo(
        "audit: useful={useful} redundant={redundant} low_value={low_value} invalid={invalid}".format(**counts)
    )
    click.echo(f"report: {ws.path('usefulness_audit')}")


@main.command()
@click.pass_obj
def report(cfg: Config):
    """Recompile the research summary from persisted artifacts."""
    ws = Workspace(cfg)
    try:
        summary = compile_summary(ws)
        ws.write_json("research_summary", summary)
    except FileNotFoundError as exc:
        _die(f"missing artifact: {exc}")
    except DQError as exc:
        _die(str(exc))
    _echo_summary(summary)
    click.echo(f"summary: {ws.path('research_summary')}")


@main.command()
@click.option("--mode", type=click.Choice(["frozen", "fresh"]), required=True, help="frozen: reuse one merged schema; fresh: regenerate per trial.")
@click.option("--trials", type=int, default=5, show_default=True)
@click.option("--trial-seeds", default=None, help="Comma-separated per-trial seeds (fresh mode).")
@click.pass_obj
def c5(cfg: Config, mode, trials, trial_seeds):
    """Repeated-trial stability protocol."""
    mode_name = {"frozen": "frozen_schema", "fresh": "fresh_generation"}[mode]
    seeds = None
    if trial_seeds:
        try:
            seeds = [int(s) for s in trial_seeds.split(",")]
        except ValueError:
            _die(f"bad --trial-seeds value: {trial_seeds!r}")
    try:
        stability = run_c5(cfg, mode_name, trials=trials, trial_seeds=seeds)
    except DQError as exc:
        _die(str(exc))
    for index, trial in enumerate(stability.trials, start=1):
        if "error" in trial:
            click.echo(f"trial {index}: ERROR {trial['error']}")
        else:
            totals = " ".join(f"{k}={v[0]}/{v[1]}" for k, v in trial.items())
            click.echo(f"trial {index}: {totals}")
    verdict = "stable" if stability.stable else f"UNSTABLE (trials {', '.join(map(str, stability.deviating_trials))})"
    click.echo(f"{stability.mode}: {len(stability.trials)} trials, {verdict}")
    if not stability.stable:
        sys.exit(EXIT_VALIDATION)


if __name__ == "__main__":
    main()
