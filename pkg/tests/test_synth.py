import pytest
import requests

from dqflow.anomalies import run_comparator
from dqflow.dsl import TEST_KIND_NAMES
from dqflow.engine import merge_schemas
from dqflow.errors import AuditError, ExtractionError, GenerationError, ProviderError
from dqflow.synth import (
    HttpProvider,
    MockProfile,
    MockProvider,
    audit_tests,
    build_prompt,
    extract_context,
    generate_tests,
)


def test_dim_teams_context(pipeline):
    ctx = extract_context(pipeline.local, "dim_teams", 5)
    assert [name for name, _, _ in ctx.columns] == ["team_id", "team_name"]
    assert ctx.primary_key == ("team_id",)
    assert len(ctx.sample_rows) == 5
    assert ctx.sample_rows[0][0] == ("team_id", "1")


def test_zero_samples_gives_schema_only_context(pipeline):
    ctx = extract_context(pipeline.local, "dim_teams", 0)
    assert ctx.sample_rows == ()
    assert ctx.columns


def test_samples_match_direct_query(pipeline):
    ctx = extract_context(pipeline.local, "fct_matches", 5)
    direct = pipeline.local.query(
        'SELECT "match_id" FROM "fct_matches" ORDER BY "match_id" LIMIT 5'
    )
    sampled_ids = [dict(row)["match_id"] for row in ctx.sample_rows]
    assert sampled_ids == [str(r[0]) for r in direct]


def test_extraction_limited_to_curated_models(pipeline):
    with pytest.raises(ExtractionError):
        extract_context(pipeline.local, "stg_matches", 5)
    with pytest.raises(ExtractionError):
        extract_context(pipeline.local, "dim_teams_v2", 5)


def test_prompt_is_deterministic(pipeline):
    ctx = extract_context(pipeline.local, "dim_teams", 5)
    again = extract_context(pipeline.local, "dim_teams", 5)
    assert build_prompt(ctx) == build_prompt(again)


def test_prompt_mentions_columns_and_all_kinds(pipeline):
    ctx = extract_context(pipeline.local, "dim_teams", 5)
    prompt = build_prompt(ctx)
    assert "- team_id: integer" in prompt
    assert "- team_name: text" in prompt
    for kind in TEST_KIND_NAMES:
        assert kind in prompt
    assert "Only reference the listed columns" in prompt


def test_training_prompt_contains_feature_columns(pipeline):
    ctx = extract_context(pipeline.local, "fct_training_dataset", 5)
    prompt = build_prompt(ctx)
    for name, _, _ in ctx.columns:
        assert f"- {name}:" in prompt
    assert "goal_diff" in prompt and "result_label" in prompt


def test_mock_distribution_matches_recorded_run(pipeline):
    generation = pipeline.generation
    assert generation.per_model_counts == {
        "dim_teams": 3,
        "fct_matches": 13,
        "fct_training_dataset": 9,
    }
    assert generation.total_items == 25
    assert generation.invalid_candidates == ()


def test_mock_is_pure(pipeline):
    provider = MockProvider()
    first = generate_tests(provider, pipeline.contexts, seed=42)
    second = generate_tests(provider, pipeline.contexts, seed=42)
    assert first.schema_file == second.schema_file
    assert first.raw_responses == second.raw_responses


def test_degenerate_seed_fails_generation(pipeline):
    provider = MockProvider(MockProfile(degenerate_seeds=frozenset({3})))
    with pytest.raises(GenerationError) as excinfo:
        generate_tests(provider, pipeline.contexts, seed=3)
    assert excinfo.value.raw_responses  # responses preserved for inspection
    ok = generate_tests(provider, pipeline.contexts, seed=4)
    assert ok.total_items == 25


class ScriptedProvider:
    def __init__(self, responses):
        self.responses = list(responses)

    def generate(self, prompt, seed):
        return self.responses.pop(0)


def test_unknown_column_recorded_as_invalid_candidate(pipeline):
    bad = """
version: 1
models:
  - name: dim_teams
    columns:
      - name: team_id
        tests: [not_null]
      - name: nickname
        tests: [not_null]
"""
    provider = ScriptedProvider([bad])
    generation = generate_tests(provider, pipeline.contexts[:1], seed=1)
    assert generation.per_model_counts == {"dim_teams": 1}
    assert len(generation.invalid_candidates) == 1
    assert generation.invalid_candidates[0].issue.code == "unknown-column"
    assert generation.total_items == 2
    merge = merge_schemas(pipeline.baseline, generation.schema_file)
    assert merge.added_ids == ()  # not_null(team_id) duplicates the baseline


def test_unparseable_response_fails_that_model(pipeline):
    provider = ScriptedProvider(["not: [valid", "whatever", "irrelevant"])
    with pytest.raises(GenerationError, match="dim_teams"):
        generate_tests(provider, pipeline.contexts, seed=1)


def test_http_provider_posts_and_parses(monkeypatch):
    calls = {}

    class FakeResponse:
        status_code = 200

        def raise_for_status(self):
            pass

        def json(self):
            return {"choices": [{"message": {"content": "version: 1\nmodels: []"}}]}

    def fake_post(url, json=None, headers=None, timeout=None):
        calls["url"] = url
        calls["payload"] = json
        calls["headers"] = headers
        return FakeResponse()

    monkeypatch.setenv("DQ_LLM_API_KEY", "secret-key")
    monkeypatch.setattr(requests, "post", fake_post)
    provider = HttpProvider("https://example.test/v1/chat", "small-model")
    text = provider.generate("hello", seed=7)
    assert text == "version: 1\nmodels: []"
    assert calls["url"] == "https://example.test/v1/chat"
    assert calls["payload"]["model"] == "small-model"
    assert calls["payload"]["seed"] == 7
    assert calls["headers"]["Authorization"] == "Bearer secret-key"


def test_http_provider_retries_then_succeeds(monkeypatch):
    attempts = []

    class FakeResponse:
        def raise_for_status(self):
            pass

        def json(self):
            return {"choices": [{"message": {"content": "ok"}}]}

    def flaky_post(url, **kwargs):
        attempts.append(url)
        if len(attempts) < 3:
            raise requests.ConnectionError("boom")
        return FakeResponse()

    monkeypatch.setenv("DQ_LLM_API_KEY", "k")
    monkeypatch.setattr(requests, "post", flaky_post)
    slept = []
    provider = HttpProvider(
        "https://example.test", "m", max_retries=3, sleep=slept.append
    )
    assert provider.generate("p", seed=0) == "ok"
    assert len(attempts) == 3
    assert slept == [0.5, 1.0]


def test_http_provider_exhausts_retries(monkeypatch):
    def always_fail(url, **kwargs):
        raise requests.ConnectionError("down")

    monkeypatch.setenv("DQ_LLM_API_KEY", "k")
    monkeypatch.setattr(requests, "post", always_fail)
    provider = HttpProvider("https://example.test", "m", sleep=lambda _: None)
    with pytest.raises(ProviderError, match="3 attempts"):
        provider.generate("p", seed=0)


def test_http_provider_requires_env_key(monkeypatch):
    monkeypatch.delenv("DQ_LLM_API_KEY", raising=False)
    provider = HttpProvider("https://example.test", "m")
    with pytest.raises(ProviderError, match="DQ_LLM_API_KEY"):
        provider.generate("p", seed=0)


@pytest.fixture(scope="module")
def audited(pipeline):
    comparator = run_comparator(
        pipeline.local, pipeline.schemas, pipeline.snapshot, pipeline.catalog
    )
    report = audit_tests(pipeline.generation, pipeline.merge, pipeline.clean_report, comparator)
    return comparator, report


def test_audit_distribution(audited):
    _, report = audited
    assert report.counts() == {"useful": 9, "redundant": 4, "low_value": 12, "invalid": 0}
    assert report.per_model() == {
        "dim_teams": {"useful": 1, "redundant": 2, "low_value": 0, "invalid": 0},
        "fct_matches": {"useful": 5, "redundant": 2, "low_value": 6, "invalid": 0},
        "fct_training_dataset": {"useful": 3, "redundant": 0, "low_value": 6, "invalid": 0},
    }
    assert len(report.records) == 25


def test_redundant_records_point_at_their_duplicate(audited):
    _, report = audited
    redundant = [r for r in report.records if r.cls == "redundant"]
    assert {r.test_id for r in redundant} == {
        "dim_teams.team_id.not_null",
        "dim_teams.team_id.unique",
        "fct_matches.match_id.not_null",
        "fct_matches.match_id.unique",
    }
    for record in redundant:
        assert record.evidence == {"duplicate_of": record.test_id}


def test_accepted_values_detects_both_status_anomalies(audited):
    _, report = audited
    record = next(
        r
        for r in report.records
        if r.cls == "useful" and r.test_id.startswith("fct_matches.match_status.accepted_values")
    )
    # set-difference of detected ids between conditions pins the increment
    assert record.evidence["incremental_anomalies_detected"] == ["B2", "C5"]


def test_low_value_items_pass_clean_with_no_increment(audited, pipeline):
    _, report = audited
    for record in report.records:
        if record.cls == "low_value":
            assert pipeline.clean_report.status_of(record.test_id) == "pass"
            assert "incremental_anomalies_detected" not in record.evidence


def test_useful_increments_cover_the_detection_gap(audited):
    comparator, report = audited
    baseline = set(comparator.matrix("manual_only").detected_ids)
    strong = set(comparator.matrix("manual_llm").detected_ids)
    union = set()
    for record in report.records:
        if record.cls == "useful":
            union |= set(record.evidence["incremental_anomalies_detected"])
    assert union >= strong - baseline


def test_every_item_gets_exactly_one_class(audited, pipeline):
    _, report = audited
    ids = [r.test_id for r in report.records]
    assert len(ids) == len(set(ids))
    assert sum(report.counts().values()) == pipeline.generation.total_items


def test_audit_requires_comparator_detail(pipeline):
    from dqflow.anomalies import ComparatorReport

    empty = ComparatorReport(
        matrices=(), results=(), catalog_size=0,
        absolute_gain_pp=None, relative_improvement_pct=None,
    )
    with pytest.raises(AuditError):
        audit_tests(pipeline.generation, pipeline.merge, pipeline.clean_report, empty)
