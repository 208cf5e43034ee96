import pytest

from dqflow.dsl import (
    SchemaFile,
    TestKind,
    TestSpec,
    parse_schema_document,
    parse_schema_file,
    serialize_schema_file,
)
from dqflow.errors import SchemaParseError
from dqflow.fixtures_io import baseline_schema, expanded_schema

MINIMAL = """
version: 1
models:
  - name: dim_teams
    columns:
      - name: team_id
        tests:
          - not_null
          - unique
"""


def _codes(excinfo) -> set[str]:
    return {issue.code for issue in excinfo.value.issues}


def test_minimal_document_parses_to_two_specs():
    schema = parse_schema_file(MINIMAL)
    tests = schema.all_tests()
    assert [t.id for t in tests] == ["dim_teams.team_id.not_null", "dim_teams.team_id.unique"]
    assert all(t.origin == "manual" for t in tests)
    assert schema.version == 1


def test_misspelled_kind_is_a_named_error():
    doc = MINIMAL.replace("- unique", "- uniqe")
    with pytest.raises(SchemaParseError) as excinfo:
        parse_schema_file(doc)
    assert "uniqe" in str(excinfo.value)
    assert _codes(excinfo) == {"unknown-test-kind"}


def test_unknown_top_level_key_rejected():
    with pytest.raises(SchemaParseError) as excinfo:
        parse_schema_file("version: 1\nmodels: []\nsources: []\n")
    assert _codes(excinfo) == {"unknown-key"}


def test_duplicate_model_rejected():
    doc = """
version: 1
models:
  - name: dim_teams
  - name: dim_teams
"""
    with pytest.raises(SchemaParseError) as excinfo:
        parse_schema_file(doc)
    assert _codes(excinfo) == {"duplicate-model"}


def test_unknown_model_rejected():
    with pytest.raises(SchemaParseError) as excinfo:
        parse_schema_file("version: 1\nmodels:\n  - name: dim_players\n")
    assert _codes(excinfo) == {"unknown-model"}


def test_unknown_column_becomes_invalid_candidate():
    doc = """
version: 1
models:
  - name: dim_teams
    columns:
      - name: nickname
        tests:
          - not_null
"""
    outcome = parse_schema_document(doc)
    assert outcome.schema_file is not None
    assert outcome.schema_file.all_tests() == []
    assert len(outcome.invalid_tests) == 1
    assert outcome.invalid_tests[0].issue.code == "unknown-column"
    with pytest.raises(SchemaParseError):
        parse_schema_file(doc)


@pytest.mark.parametrize(
    "test_item,code",
    [
        ("- accepted_values", "malformed-params"),
        ("- accepted_values: { values: [] }", "malformed-params"),
        ("- accepted_values: { values: [A], extra: 1 }", "malformed-params"),
        ("- relationship: { to: dim_teams }", "malformed-params"),
        ("- relationship: { to: dim_players, field: team_id }", "unknown-reference"),
        ("- relationship: { to: dim_teams, field: ghost }", "unknown-reference"),
        ("- expression: { predicate: 'team_id > 0' }", "invalid-placement"),
        ("- not_null: { oops: 1 }", "malformed-params"),
    ],
)
def test_bad_column_test_items(test_item, code):
    doc = f"""
version: 1
models:
  - name: dim_teams
    columns:
      - name: team_id
        tests:
          {test_item}
"""
    outcome = parse_schema_document(doc)
    assert [c.issue.code for c in outcome.invalid_tests] == [code]


@pytest.mark.parametrize(
    "predicate,code",
    [
        ("team_id > 0; drop table dim_teams", "invalid-predicate"),
        ("(select 1) = 1", "invalid-predicate"),
        ("points > 0", "unknown-column"),
    ],
)
def test_predicate_sandbox(predicate, code):
    doc = f"""
version: 1
models:
  - name: dim_teams
    tests:
      - expression: {{ predicate: "{predicate}" }}
"""
    outcome = parse_schema_document(doc)
    assert [c.issue.code for c in outcome.invalid_tests] == [code]


def test_model_level_expression_parses():
    doc = """
version: 1
models:
  - name: fct_training_dataset
    tests:
      - expression: { predicate: "goal_diff is not null and result_label is not null" }
"""
    schema = parse_schema_file(doc)
    (spec,) = schema.all_tests()
    assert spec.column is None
    assert spec.id.startswith("fct_training_dataset.expression.")
    assert spec.signature() == ("fct_training_dataset", None, "expression")


def test_non_expression_kind_rejected_at_model_level():
    doc = """
version: 1
models:
  - name: dim_teams
    tests:
      - not_null: {}
"""
    outcome = parse_schema_document(doc)
    assert [c.issue.code for c in outcome.invalid_tests] == ["invalid-placement"]


def test_duplicate_test_recorded_once():
    doc = MINIMAL.replace("- unique", "- unique\n          - not_null")
    outcome = parse_schema_document(doc)
    assert len(outcome.schema_file.all_tests()) == 2
    assert [c.issue.code for c in outcome.invalid_tests] == ["duplicate-test"]


@pytest.mark.parametrize("loader", [baseline_schema, expanded_schema])
def test_fixture_round_trip(loader):
    schema = loader()
    text = serialize_schema_file(schema)
    reparsed = parse_schema_file(text)
    assert reparsed == SchemaFile(version=schema.version, models=schema.models)
    # serialization is canonical: a second pass is byte-identical
    assert serialize_schema_file(reparsed) == text


def test_ids_are_content_derived_not_positional():
    forward = TestSpec(
        model="fct_matches",
        column="match_status",
        kind=TestKind("accepted_values", values=("A", "B", "C")),
    )
    shuffled = TestSpec(
        model="fct_matches",
        column="match_status",
        kind=TestKind("accepted_values", values=("C", "A", "B")),
    )
    different = TestSpec(
        model="fct_matches",
        column="match_status",
        kind=TestKind("accepted_values", values=("A", "B")),
    )
    assert forward.id == shuffled.id
    assert forward.id != different.id


def test_relationship_params_normalize_case():
    a = TestKind("relationship", to_model="dim_teams", to_column="team_id")
    b = TestKind("relationship", to_model="DIM_TEAMS", to_column="TEAM_ID")
    assert a.normalized_params() == b.normalized_params()


def test_expression_params_normalize_whitespace():
    a = TestKind("expression", predicate="a  >\n 0").normalized_params()
    b = TestKind("expression", predicate="a > 0").normalized_params()
    assert a == b


def test_origin_does_not_affect_equality():
    manual = parse_schema_file(MINIMAL, origin="manual")
    generated = parse_schema_file(MINIMAL, origin="generated")
    assert manual == generated
    assert generated.all_tests()[0].origin == "generated"


def test_syntax_error_reported():
    with pytest.raises(SchemaParseError) as excinfo:
        parse_schema_file("version: [unclosed")
    assert _codes(excinfo) == {"syntax"}
