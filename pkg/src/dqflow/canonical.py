"""Canonical row encoding and order-independent table checksums.

Two stores that hold the same logical content must hash identically even
when one uppercases column names, stores dates as ISO text, or widens
integer types. The encoding below erases exactly that class of drift:

- integers      -> minimal decimal text ("42", "-7", "0")
- decimals      -> scale-normalized, trailing zeros stripped ("3.50" -> "3.5")
- text          -> UTF-8 bytes
- dates         -> YYYY-MM-DD
- timestamps    -> UTC YYYY-MM-DDTHH:MM:SSZ
- booleans      -> "true" / "false"
- NULL          -> the two bytes "\\N", regardless of type

A row is its values in lowercase-column-name order, joined by the unit
separator byte 0x1F. A table checksum is the wrapping 64-bit sum of the
FNV-1a-64 hash of each encoded row, so row order never matters and the
empty table hashes to 0.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Iterable, Mapping

from .errors import EncodingError
from .schema import ColumnType, TableSchema

UNIT_SEPARATOR = b"\x1f"
NULL_TOKEN = b"\\N"

FNV64_OFFSET_BASIS = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash, pinned bit-exactly for cross-implementation use."""
    h = FNV64_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def encode_value(value: object, ctype: ColumnType) -> bytes:
    """Encode one value under its declared type; total for valid inputs."""
    if value is None:
        return NULL_TOKEN
    kind = ctype.kind
    if kind == "integer":
        if isinstance(value, bool):
            raise EncodingError(f"boolean {value!r} not representable as integer")
        if isinstance(value, int):
            return str(value).encode("ascii")
        if isinstance(value, str):
            try:
                return str(int(value)).encode("ascii")
            except ValueError:
                pass
        raise EncodingError(f"value {value!r} not representable as integer")
    if kind == "decimal":
        return _encode_decimal(value, ctype)
    if kind == "text":
        if isinstance(value, str):
            return value.encode("utf-8")
        raise EncodingError(f"value {value!r} not representable as text")
    if kind == "date":
        return _encode_date(value)
    if kind == "timestamp":
        return _encode_timestamp(value)
    if kind == "boolean":
        return _encode_boolean(value)
    raise EncodingError(f"unhandled column type {ctype}")


def _encode_decimal(value: object, ctype: ColumnType) -> bytes:
    if isinstance(value, bool):
        raise EncodingError(f"boolean {value!r} not representable as {ctype}")
    if isinstance(value, (int, Decimal)):
        candidate = Decimal(value)
    elif isinstance(value, str):
        try:
            candidate = Decimal(value)
        except InvalidOperation:
            raise EncodingError(f"value {value!r} not representable as {ctype}") from None
    else:
        raise EncodingError(f"value {value!r} not representable as {ctype}")
    quantum = Decimal(1).scaleb(-int(ctype.scale or 0))
    try:
        quantized = candidate.quantize(quantum)
    except InvalidOperation:
        raise EncodingError(f"value {value!r} overflows {ctype}") from None
    if quantized != candidate:
        raise EncodingError(f"value {value!r} loses precision under {ctype}")
    if len(quantized.as_tuple().digits) > int(ctype.precision or 0):
        raise EncodingError(f"value {value!r} overflows {ctype}")
    text = format(quantized, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text.encode("ascii")


def _encode_date(value: object) -> bytes:
    if isinstance(value, dt.datetime):
        raise EncodingError(f"datetime {value!r} not representable as date")
    if isinstance(value, dt.date):
        return value.isoformat().encode("ascii")
    if isinstance(value, str):
        try:
            return dt.date.fromisoformat(value).isoformat().encode("ascii")
        except ValueError:
            raise EncodingError(f"value {value!r} not representable as date") from None
    raise EncodingError(f"value {value!r} not representable as date")


def _encode_timestamp(value: object) -> bytes:
    if isinstance(value, str):
        try:
            value = dt.datetime.fromisoformat(value.replace("Z", "+00:00"))
        except ValueError:
            raise EncodingError(f"value {value!r} not representable as timestamp") from None
    if not isinstance(value, dt.datetime):
        raise EncodingError(f"value {value!r} not representable as timestamp")
    if value.tzinfo is None:
        value = value.replace(tzinfo=dt.timezone.utc)
    value = value.astimezone(dt.timezone.utc)
    return value.strftime("%Y-%m-%dT%H:%M:%SZ").encode("ascii")


def _encode_boolean(value: object) -> bytes:
    if isinstance(value, bool):
        return b"true" if value else b"false"
    if isinstance(value, int) and value in (0, 1):
        return b"true" if value else b"false"
    if isinstance(value, str) and value.lower() in ("true", "false", "0", "1"):
        return b"true" if value.lower() in ("true", "1") else b"false"
    raise EncodingError(f"value {value!r} not representable as boolean")


def encode_row(row: Mapping[str, object], schema: TableSchema) -> bytes:
    """Canonical bytes for one row; column names matched case-insensitively."""
    by_lower = {k.lower(): v for k, v in row.items()}
    parts: list[bytes] = []
    for column in sorted(schema.columns, key=lambda c: c.name.lower()):
        key = column.name.lower()
        if key not in by_lower:
            raise EncodingError(f"column {column.name!r} missing from row")
        try:
            parts.append(encode_value(by_lower[key], column.type))
        except EncodingError as exc:
            raise EncodingError(f"column {column.name!r}: {exc}") from None
    return UNIT_SEPARATOR.join(parts)


@dataclass(frozen=True)
class TableChecksum:
    """Order-independent 64-bit table digest plus the row count it covered."""

    value: int
    row_count: int


def checksum_rows(rows: Iterable[Mapping[str, object]], schema: TableSchema) -> TableChecksum:
    """Wrapping 64-bit sum of per-row FNV-1a-64 hashes; empty input -> 0."""
    total = 0
    count = 0
    for row in rows:
        total = (total + fnv1a64(encode_row(row, schema))) & _MASK64
        count += 1
    return TableChecksum(value=total, row_count=count)
