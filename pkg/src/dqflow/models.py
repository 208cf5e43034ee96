"""The four analytical models and their materialization.

stg_matches is the typed landing table; dim_teams, fct_matches, and
fct_training_dataset are the curated outputs that get migrated and
validated cross-store.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import DQError, InvalidParameterError, ModelRunError
from .schema import Column, TableSchema, DATE, INTEGER, TEXT
from .season import RawMatchRecord

MODEL_SCHEMAS: dict[str, TableSchema] = {
    "stg_matches": TableSchema(
        name="stg_matches",
        columns=(
            Column("match_id", INTEGER, nullable=False),
            Column("home_team", TEXT, nullable=False),
            Column("away_team", TEXT, nullable=False),
            Column("match_date", DATE, nullable=False),
            Column("match_status", TEXT, nullable=False),
            Column("home_goals", INTEGER, nullable=False),
            Column("away_goals", INTEGER, nullable=False),
        ),
        primary_key=("match_id",),
    ),
    "dim_teams": TableSchema(
        name="dim_teams",
        columns=(
            Column("team_id", INTEGER, nullable=False),
            Column("team_name", TEXT, nullable=False),
        ),
        primary_key=("team_id",),
    ),
    "fct_matches": TableSchema(
        name="fct_matches",
        columns=(
            Column("match_id", INTEGER, nullable=False),
            Column("home_team_id", INTEGER, nullable=False),
            Column("away_team_id", INTEGER, nullable=False),
            Column("match_date", DATE, nullable=False),
            Column("match_status", TEXT, nullable=False),
            Column("home_goals", INTEGER, nullable=False),
            Column("away_goals", INTEGER, nullable=False),
        ),
        primary_key=("match_id",),
    ),
    "fct_training_dataset": TableSchema(
        name="fct_training_dataset",
        columns=(
            Column("match_id", INTEGER, nullable=False),
            Column("home_team_id", INTEGER, nullable=False),
            Column("away_team_id", INTEGER, nullable=False),
            Column("match_date", DATE, nullable=False),
            Column("goal_diff", INTEGER, nullable=False),
            Column("result_label", TEXT, nullable=False),
        ),
        primary_key=("match_id",),
    ),
}


@dataclass(frozen=True)
class ModelDefinition:
    name: str
    depends_on: tuple[str, ...]
    schema: TableSchema


MODEL_DEFINITIONS: tuple[ModelDefinition, ...] = (
    ModelDefinition("stg_matches", (), MODEL_SCHEMAS["stg_matches"]),
    ModelDefinition("dim_teams", ("stg_matches",), MODEL_SCHEMAS["dim_teams"]),
    ModelDefinition("fct_matches", ("stg_matches", "dim_teams"), MODEL_SCHEMAS["fct_matches"]),
    ModelDefinition("fct_training_dataset", ("fct_matches",), MODEL_SCHEMAS["fct_training_dataset"]),
)

MODEL_ORDER = tuple(d.name for d in MODEL_DEFINITIONS)
CURATED_MODELS = ("dim_teams", "fct_matches", "fct_training_dataset")

RESULT_LABELS = ("HOME_WIN", "AWAY_WIN", "DRAW")


@dataclass(frozen=True)
class ModelRunReport:
    row_counts: dict[str, int]
    full_refresh: bool
    materialized: tuple[str, ...]  # dependency order actually built

    def to_json_dict(self) -> dict:
        return {
            "row_counts": dict(self.row_counts),
            "full_refresh": self.full_refresh,
            "materialized": list(self.materialized),
        }


def _result_label(home_goals: int, away_goals: int) -> str:
    if home_goals > away_goals:
        return "HOME_WIN"
    if home_goals < away_goals:
        return "AWAY_WIN"
    return "DRAW"


def derive_team_ids(raw: Sequence[RawMatchRecord]) -> dict[str, int]:
    """Assign team_id 1..n by first appearance, home side before away."""
    ids: dict[str, int] = {}
    for record in raw:
        for name in (record.home_team, record.away_team):
            if name not in ids:
                ids[name] = len(ids) + 1
    return ids


def derive_model_rows(raw: Sequence[RawMatchRecord]) -> dict[str, list[dict[str, object]]]:
    """Pure derivation of all four model row sets from the raw season."""
    team_ids = derive_team_ids(raw)
    stg = [
        {
            "match_id": r.match_id,
            "home_team": r.home_team,
            "away_team": r.away_team,
            "match_date": r.match_date,
            "match_status": r.match_status,
            "home_goals": r.home_goals,
            "away_goals": r.away_goals,
        }
        for r in raw
    ]
    dim = [{"team_id": i, "team_name": name} for name, i in team_ids.items()]
    fct = [
        {
            "match_id": r.match_id,
            "home_team_id": team_ids[r.home_team],
            "away_team_id": team_ids[r.away_team],
            "match_date": r.match_date,
            "match_status": r.match_status,
            "home_goals": r.home_goals,
            "away_goals": r.away_goals,
        }
        for r in raw
    ]
    training = [
        {
            "match_id": r.match_id,
            "home_team_id": team_ids[r.home_team],
            "away_team_id": team_ids[r.away_team],
            "match_date": r.match_date,
            "goal_diff": r.home_goals - r.away_goals,
            "result_label": _result_label(r.home_goals, r.away_goals),
        }
        for r in raw
    ]
    return {
        "stg_matches": stg,
        "dim_teams": dim,
        "fct_matches": fct,
        "fct_training_dataset": training,
    }


def run_models(backend, raw: Sequence[RawMatchRecord], full_refresh: bool = True) -> ModelRunReport:
    """Materialize the four models in dependency order.

    full_refresh drops and rebuilds everything; otherwise only missing
    tables are built (there is no incremental strategy beyond that).
    """
    if not raw:
        raise InvalidParameterError("raw season is empty; nothing to materialize")
    rows_by_model = derive_model_rows(raw)
    counts: dict[str, int] = {}
    built: list[str] = []
    for definition in MODEL_DEFINITIONS:
        name = definition.name
        try:
            if full_refresh or not backend.table_exists(name):
                backend.create_table(definition.schema, drop_existing=True)
                backend.bulk_load(name, rows_by_model[name])
                built.append(name)
            counts[name] = backend.row_count(name)
        except DQError as exc:
            if isinstance(exc, ModelRunError):
                raise
            raise ModelRunError(name, str(exc)) from exc
        except Exception as exc:  # backend write failures of any flavor
            raise ModelRunError(name, str(exc)) from exc
    return ModelRunReport(row_counts=counts, full_refresh=full_refresh, materialized=tuple(built))
