import pytest

from dqflow.anomalies import (
    comparator_report_from_json,
    inject,
    run_comparator,
    run_condition,
)
from dqflow.backends import restore, snapshot, verify_against_snapshot
from dqflow.engine import compile_test, execute_tests
from dqflow.errors import ExperimentError, InjectionError
from dqflow.fixtures_io import baseline_schema, default_catalog, expanded_schema

from .oracles import brute_force_failing_rows


@pytest.fixture()
def experiment_env(tmp_path, season42):
    from dqflow.backends import LocalBackend
    from dqflow.models import run_models

    backend = LocalBackend(tmp_path / "local.db")
    run_models(backend, season42, full_refresh=True)
    snap = snapshot(backend, tmp_path / "local.db.clean")
    yield backend, snap
    backend.close()


def _by_id(catalog, anomaly_id):
    return next(spec for spec in catalog if spec.id == anomaly_id)


def test_catalog_shape():
    catalog = default_catalog()
    assert len(catalog) == 16
    by_batch = {}
    for spec in catalog:
        by_batch.setdefault(spec.batch, []).append(spec.id)
    assert {batch: len(ids) for batch, ids in by_batch.items()} == {"A": 4, "B": 6, "C": 6}
    assert all(spec.detector_signature for spec in catalog)


def test_selectors_resolve_on_clean_data(experiment_env):
    backend, _ = experiment_env
    for spec in default_catalog():
        sel = spec.mutation.selector
        rows = backend.query(
            f'SELECT * FROM {backend.table_ref(spec.table)} WHERE "{sel.column}" = ?',
            (sel.value,),
        )
        assert rows, f"{spec.id} selector matched nothing"


def test_inject_null_key(experiment_env):
    backend, _ = experiment_env
    receipt = inject(backend, _by_id(default_catalog(), "A1"))
    assert receipt.rows_affected == 1
    assert receipt.changes[0]["before"] == 3
    assert receipt.changes[0]["after"] is None
    rows = backend.fetch_rows("dim_teams")
    assert sum(1 for r in rows if r["team_id"] is None) == 1


def test_inject_duplicate_row(experiment_env):
    backend, _ = experiment_env
    inject(backend, _by_id(default_catalog(), "A2"))
    assert backend.row_count("dim_teams") == 21
    # count-query oracle
    count = backend.query('SELECT COUNT(*) FROM "dim_teams" WHERE "team_id" = 7')[0][0]
    assert count == 2


def test_injected_invalid_status_fails_accepted_values(experiment_env):
    backend, _ = experiment_env
    inject(backend, _by_id(default_catalog(), "B2"))
    schema = expanded_schema()
    spec = next(
        s
        for s in schema.all_tests()
        if s.kind.name == "accepted_values" and s.model == "fct_matches"
    )
    compiled = compile_test(spec, schema, backend)
    rows = backend.query(compiled.sql, compiled.params)
    assert len(rows) == 1
    assert brute_force_failing_rows(spec, backend.fetch_rows("fct_matches")) == 1


def test_empty_selector_aborts(experiment_env):
    backend, _ = experiment_env
    import dataclasses

    spec = _by_id(default_catalog(), "A1")
    bad = dataclasses.replace(
        spec,
        mutation=dataclasses.replace(
            spec.mutation, selector=dataclasses.replace(spec.mutation.selector, value=999)
        ),
    )
    with pytest.raises(InjectionError):
        inject(backend, bad)


def test_manual_only_batch_fragments(experiment_env):
    backend, snap = experiment_env
    base = baseline_schema()
    catalog = default_catalog()
    result_a = run_condition("manual_only", "A", backend, base, snap, catalog)
    assert (result_a.detected, result_a.total) == (4, 4)
    result_b = run_condition("manual_only", "B", backend, base, snap, catalog)
    assert (result_b.detected, result_b.total) == (0, 6)
    result_c = run_condition("manual_only", "C", backend, base, snap, catalog)
    assert (result_c.detected, result_c.total) == (3, 6)
    assert set(result_c.detected_ids) == {"C1", "C2", "C3"}


def test_manual_llm_detects_all_mixed_anomalies(pipeline):
    result = run_condition(
        "manual_llm", "C", pipeline.local, pipeline.merge.merged, pipeline.snapshot,
        pipeline.catalog,
    )
    assert (result.detected, result.total) == (6, 6)


def test_condition_leaves_store_clean(experiment_env):
    backend, snap = experiment_env
    run_condition("manual_only", "A", backend, baseline_schema(), snap, default_catalog())
    assert verify_against_snapshot(backend, snap)


def test_attribution_soundness_per_anomaly(pipeline):
    """Detected anomalies have signature tests that fail only while injected."""
    merged = pipeline.merge.merged
    backend, snap = pipeline.local, pipeline.snapshot
    for spec in pipeline.catalog:
        restore(backend, snap)
        matching = [
            t.id
            for t in merged.all_tests()
            if t.signature() in {slot.as_tuple() for slot in spec.detector_signature}
        ]
        assert matching, f"{spec.id}: no merged test matches its signature"
        inject(backend, spec)
        report = execute_tests(backend, merged)
        failing = [tid for tid in matching if report.status_of(tid) == "fail"]
        assert failing, f"{spec.id}: no signature test failed after injection"
        restore(backend, snap)
        report = execute_tests(backend, merged)
        assert all(report.status_of(tid) == "pass" for tid in matching)


def test_comparator_golden_matrix(pipeline):
    report = run_comparator(pipeline.local, pipeline.schemas, pipeline.snapshot, pipeline.catalog)
    totals = {m.condition: (m.detected, m.total) for m in report.matrices}
    assert totals == {
        "manual_only": (7, 16),
        "manual_expanded": (16, 16),
        "manual_llm": (16, 16),
    }
    per_batch = {m.condition: dict((b, (d, t)) for b, d, t in m.per_batch) for m in report.matrices}
    assert per_batch["manual_only"] == {"A": (4, 4), "B": (0, 6), "C": (3, 6)}
    assert report.absolute_gain_pp == 56.25
    assert report.relative_improvement_pct == 128.57


def test_comparator_monotonicity(pipeline):
    report = run_comparator(pipeline.local, pipeline.schemas, pipeline.snapshot, pipeline.catalog)
    for batch in ("A", "B", "C"):
        weak = set(report.result("manual_only", batch).detected_ids)
        for condition in ("manual_expanded", "manual_llm"):
            strong = set(report.result(condition, batch).detected_ids)
            assert weak <= strong


def test_comparator_is_deterministic(pipeline):
    first = run_comparator(pipeline.local, pipeline.schemas, pipeline.snapshot, pipeline.catalog)
    second = run_comparator(pipeline.local, pipeline.schemas, pipeline.snapshot, pipeline.catalog)
    assert first == second


def test_same_schema_for_all_conditions_gives_zero_gain(experiment_env):
    backend, snap = experiment_env
    base = baseline_schema()
    schemas = {"manual_only": base, "manual_expanded": base, "manual_llm": base}
    report = run_comparator(backend, schemas, snap, default_catalog())
    totals = [m.detected for m in report.matrices]
    assert totals == [7, 7, 7]
    assert report.absolute_gain_pp == 0.0
    assert report.relative_improvement_pct == 0.0


def test_empty_catalog_reports_null_metrics(experiment_env):
    backend, snap = experiment_env
    base = baseline_schema()
    schemas = {"manual_only": base, "manual_expanded": base, "manual_llm": base}
    report = run_comparator(backend, schemas, snap, ())
    assert [m.detected for m in report.matrices] == [0, 0, 0]
    assert [m.total for m in report.matrices] == [0, 0, 0]
    assert report.absolute_gain_pp is None
    assert report.relative_improvement_pct is None


def test_missing_condition_schema_rejected(experiment_env):
    backend, snap = experiment_env
    with pytest.raises(ExperimentError):
        run_comparator(backend, {"manual_only": baseline_schema()}, snap, default_catalog())


def test_report_json_round_trip(pipeline):
    report = run_comparator(pipeline.local, pipeline.schemas, pipeline.snapshot, pipeline.catalog)
    payload = report.to_json_dict()
    rebuilt = comparator_report_from_json(payload)
    assert {m.condition: (m.detected, m.total) for m in rebuilt.matrices} == {
        m.condition: (m.detected, m.total) for m in report.matrices
    }
    assert rebuilt.contributing_map("manual_llm") == report.contributing_map("manual_llm")
    assert rebuilt.absolute_gain_pp == report.absolute_gain_pp
