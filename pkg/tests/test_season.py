import datetime as dt

import pytest

from dqflow.errors import InvalidParameterError
from dqflow.season import (
    RawMatchRecord,
    SEASON_START,
    TEAM_ROSTER,
    VALID_MATCH_STATUSES,
    generate_season,
    season_from_json,
    season_to_json,
)


def test_seed42_season_has_100_matches_and_20_teams(season42):
    assert len(season42) == 100
    teams = {r.home_team for r in season42} | {r.away_team for r in season42}
    assert len(teams) == 20
    assert teams <= set(TEAM_ROSTER)


def test_same_seed_gives_identical_records(season42):
    again = generate_season(42, 20, 100)
    assert again == season42


def test_minimal_instance():
    records = generate_season(7, 2, 1)
    assert len(records) == 1
    record = records[0]
    assert record.home_team != record.away_team
    assert {record.home_team, record.away_team} <= set(TEAM_ROSTER[:2])


def test_match_ids_are_consecutive_from_one(season42):
    assert [r.match_id for r in season42] == list(range(1, 101))


def test_clean_data_invariants(season42):
    for record in season42:
        assert record.match_status in VALID_MATCH_STATUSES
        assert record.home_team != record.away_team
        assert 0 <= record.home_goals <= 5
        assert 0 <= record.away_goals <= 5
        assert record.match_date >= SEASON_START
        assert None not in vars(record).values()


def test_dates_are_nondecreasing(season42):
    dates = [r.match_date for r in season42]
    assert dates == sorted(dates)


def test_roster_extends_beyond_twenty_teams():
    records = generate_season(1, 24, 40)
    teams = {r.home_team for r in records} | {r.away_team for r in records}
    assert len(teams) == 24


def test_odd_team_count_is_covered():
    records = generate_season(3, 5, 3)
    teams = {r.home_team for r in records} | {r.away_team for r in records}
    assert len(teams) == 5


@pytest.mark.parametrize("teams,matches", [(1, 10), (2, 0), (20, 5)])
def test_invalid_parameters_rejected(teams, matches):
    with pytest.raises(InvalidParameterError):
        generate_season(42, teams, matches)


def test_json_round_trip(season42):
    text = season_to_json(season42)
    parsed = season_from_json(text)
    assert parsed == season42
    assert isinstance(parsed[0], RawMatchRecord)
    assert isinstance(parsed[0].match_date, dt.date)
