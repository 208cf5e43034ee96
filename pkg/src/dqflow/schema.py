"""Column types and table schemas for the analytical store.

Types are deliberately narrow: the vocabulary here is exactly what the
declarative test layer and the canonical row encoder understand.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation

from .errors import SchemaError

TYPE_KINDS = ("integer", "decimal", "text", "date", "timestamp", "boolean")


@dataclass(frozen=True)
class ColumnType:
    """One of: integer, decimal(precision, scale), text, date, timestamp, boolean."""

    kind: str
    precision: int | None = None
    scale: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in TYPE_KINDS:
            raise SchemaError(f"unknown column type kind: {self.kind!r}")
        if self.kind == "decimal":
            if self.precision is None or self.scale is None:
                raise SchemaError("decimal type requires precision and scale")
            if not (self.precision >= self.scale >= 0):
                raise SchemaError(
                    f"decimal requires precision >= scale >= 0, got "
                    f"({self.precision}, {self.scale})"
                )
        elif self.precision is not None or self.scale is not None:
            raise SchemaError(f"{self.kind} type takes no precision/scale")

    def __str__(self) -> str:
        if self.kind == "decimal":
            return f"decimal({self.precision},{self.scale})"
        return self.kind


INTEGER = ColumnType("integer")
TEXT = ColumnType("text")
DATE = ColumnType("date")
TIMESTAMP = ColumnType("timestamp")
BOOLEAN = ColumnType("boolean")


def decimal_type(precision: int, scale: int) -> ColumnType:
    return ColumnType("decimal", precision, scale)


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType
    nullable: bool = True


@dataclass(frozen=True)
class TableSchema:
    """A named table: ordered columns plus an optional primary key."""

    name: str
    columns: tuple[Column, ...]
    primary_key: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        lowered = [c.name.lower() for c in self.columns]
        if len(set(lowered)) != len(lowered):
            raise SchemaError(f"table {self.name}: duplicate column names (case-insensitive)")
        for key in self.primary_key:
            if key.lower() not in lowered:
                raise SchemaError(f"table {self.name}: primary key column {key!r} not declared")

    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column(self, name: str) -> Column:
        """Look up a column case-insensitively."""
        wanted = name.lower()
        for c in self.columns:
            if c.name.lower() == wanted:
                return c
        raise SchemaError(f"table {self.name}: no column {name!r}")

    def has_column(self, name: str) -> bool:
        wanted = name.lower()
        return any(c.name.lower() == wanted for c in self.columns)


def is_representable(value: object, ctype: ColumnType) -> bool:
    """Whether a non-NULL value fits the declared column type."""
    if value is None:
        return True
    kind = ctype.kind
    if kind == "integer":
        if isinstance(value, bool):
            return False
        if isinstance(value, int):
            return True
        if isinstance(value, str):
            try:
                int(value)
                return True
            except ValueError:
                return False
        return False
    if kind == "decimal":
        if isinstance(value, bool):
            return False
        if isinstance(value, (int, Decimal)):
            candidate = Decimal(value)
        elif isinstance(value, str):
            try:
                candidate = Decimal(value)
            except InvalidOperation:
                return False
        else:
            return False
        quantum = Decimal(1).scaleb(-int(ctype.scale or 0))
        try:
            quantized = candidate.quantize(quantum)
        except InvalidOperation:
            return False
        if quantized != candidate:
            return False
        digits = quantized.as_tuple()
        return len(digits.digits) <= int(ctype.precision or 0)
    if kind == "text":
        return isinstance(value, str)
    if kind == "date":
        if isinstance(value, dt.datetime):
            return False
        if isinstance(value, dt.date):
            return True
        if isinstance(value, str):
            try:
                dt.date.fromisoformat(value)
                return True
            except ValueError:
                return False
        return False
    if kind == "timestamp":
        if isinstance(value, dt.datetime):
            return True
        if isinstance(value, str):
            try:
                dt.datetime.fromisoformat(value.replace("Z", "+00:00"))
                return True
            except ValueError:
                return False
        return False
    if kind == "boolean":
        if isinstance(value, bool):
            return True
        if isinstance(value, int):
            return value in (0, 1)
        if isinstance(value, str):
            return value.lower() in ("true", "false", "0", "1")
        return False
    return False
