import datetime as dt
from decimal import Decimal

import pytest

from dqflow.errors import SchemaError
from dqflow.schema import (
    BOOLEAN,
    Column,
    ColumnType,
    DATE,
    INTEGER,
    TEXT,
    TableSchema,
    decimal_type,
    is_representable,
)


def test_decimal_requires_precision_ge_scale():
    assert decimal_type(10, 2).precision == 10
    with pytest.raises(SchemaError):
        decimal_type(2, 5)
    with pytest.raises(SchemaError):
        ColumnType("decimal", 5, -1)


def test_decimal_requires_both_parameters():
    with pytest.raises(SchemaError):
        ColumnType("decimal", 5, None)


def test_unknown_kind_rejected():
    with pytest.raises(SchemaError):
        ColumnType("varchar")


def test_scalar_kinds_take_no_parameters():
    with pytest.raises(SchemaError):
        ColumnType("integer", 5, 2)


def test_duplicate_columns_rejected_case_insensitively():
    with pytest.raises(SchemaError):
        TableSchema("t", (Column("a", INTEGER), Column("A", TEXT)))


def test_primary_key_must_exist():
    with pytest.raises(SchemaError):
        TableSchema("t", (Column("a", INTEGER),), primary_key=("b",))


def test_column_lookup_is_case_insensitive():
    schema = TableSchema("t", (Column("Team_Id", INTEGER),), primary_key=("team_id",))
    assert schema.column("TEAM_ID").name == "Team_Id"
    assert schema.has_column("team_id")
    with pytest.raises(SchemaError):
        schema.column("missing")


@pytest.mark.parametrize(
    "value,ctype,ok",
    [
        (5, INTEGER, True),
        (True, INTEGER, False),
        ("12", INTEGER, True),
        ("x", INTEGER, False),
        (None, INTEGER, True),
        ("hello", TEXT, True),
        (5, TEXT, False),
        (dt.date(2024, 1, 5), DATE, True),
        ("2024-01-05", DATE, True),
        ("2024-13-05", DATE, False),
        (dt.datetime(2024, 1, 5), DATE, False),
        (True, BOOLEAN, True),
        (2, BOOLEAN, False),
        (Decimal("3.25"), decimal_type(6, 2), True),
        (Decimal("3.255"), decimal_type(6, 2), False),
        (Decimal("12345.00"), decimal_type(6, 2), False),
    ],
)
def test_is_representable(value, ctype, ok):
    assert is_representable(value, ctype) is ok
