"""Seeded synthetic football-season generator.

Replaces a live fixtures API with a hermetic source: a fixed 20-club
roster, a seeded PRNG for pairings, dates, and scores, and a JSON export
that serves as the raw ingest artifact.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import InvalidParameterError

TEAM_ROSTER = (
    "Arsenal",
    "Aston Villa",
    "Bournemouth",
    "Brentford",
    "Brighton",
    "Burnley",
    "Chelsea",
    "Crystal Palace",
    "Everton",
    "Fulham",
    "Liverpool",
    "Luton Town",
    "Manchester City",
    "Manchester United",
    "Newcastle United",
    "Nottingham Forest",
    "Sheffield United",
    "Tottenham Hotspur",
    "West Ham United",
    "Wolverhampton Wanderers",
)

VALID_MATCH_STATUSES = ("FINISHED", "SCHEDULED", "POSTPONED")

SEASON_START = dt.date(2023, 8, 12)
SEASON_LENGTH_DAYS = 281


@dataclass(frozen=True)
class RawMatchRecord:
    """One fixture as ingested: teams, date, status, and the final score."""

    match_id: int
    home_team: str
    away_team: str
    match_date: dt.date
    match_status: str
    home_goals: int
    away_goals: int


def _team_names(num_teams: int) -> list[str]:
    names = list(TEAM_ROSTER[:num_teams])
    for i in range(len(TEAM_ROSTER), num_teams):
        names.append(f"Team {i + 1:02d}")
    return names


def generate_season(seed: int, num_teams: int = 20, num_matches: int = 100) -> list[RawMatchRecord]:
    """Deterministically draw a season of completed fixtures.

    Every team appears in at least one match, so the first
    ceil(num_teams / 2) fixtures pair up a shuffled roster before the
    remaining pairings are drawn freely.
    """
    if num_teams < 2:
        raise InvalidParameterError(f"num_teams must be >= 2, got {num_teams}")
    if num_matches < 1:
        raise InvalidParameterError(f"num_matches must be >= 1, got {num_matches}")
    coverage = (num_teams + 1) // 2
    if num_matches < coverage:
        raise InvalidParameterError(
            f"{num_matches} matches cannot cover {num_teams} distinct teams"
        )

    rng = random.Random(seed)
    teams = _team_names(num_teams)

    shuffled = teams[:]
    rng.shuffle(shuffled)
    pairings: list[tuple[str, str]] = []
    for i in range(0, num_teams - 1, 2):
        pairings.append((shuffled[i], shuffled[i + 1]))
    if num_teams % 2 == 1:
        leftover = shuffled[-1]
        opponent = shuffled[rng.randrange(num_teams - 1)]
        pairings.append((leftover, opponent))
    while len(pairings) < num_matches:
        home, away = rng.sample(teams, 2)
        pairings.append((home, away))

    offsets = sorted(rng.randrange(SEASON_LENGTH_DAYS) for _ in range(num_matches))

    records = []
    for i, (home, away) in enumerate(pairings[:num_matches]):
        records.append(
            RawMatchRecord(
                match_id=i + 1,
                home_team=home,
                away_team=away,
                match_date=SEASON_START + dt.timedelta(days=offsets[i]),
                match_status="FINISHED",
                home_goals=rng.randrange(6),
                away_goals=rng.randrange(6),
            )
        )
    return records


def season_to_json(records: list[RawMatchRecord]) -> str:
    """Serialize the raw season as the ingest artifact (a JSON array)."""
    payload = []
    for record in records:
        row = asdict(record)
        row["match_date"] = record.match_date.isoformat()
        payload.append(row)
    return json.dumps(payload, indent=2)


def season_from_json(text: str) -> list[RawMatchRecord]:
    """Parse a previously exported season."""
    payload = json.loads(text)
    return [
        RawMatchRecord(
            match_id=row["match_id"],
            home_team=row["home_team"],
            away_team=row["away_team"],
            match_date=dt.date.fromisoformat(row["match_date"]),
            match_status=row["match_status"],
            home_goals=row["home_goals"],
            away_goals=row["away_goals"],
        )
        for row in payload
    ]


def write_season(records: list[RawMatchRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(season_to_json(records))
    return path


def read_season(path: str | Path) -> list[RawMatchRecord]:
    return season_from_json(Path(path).read_text())
