"""In-memory tabular datasets and their RFC 4180 CSV codec.

A Dataset is a header (column names) plus rows of plain Python values.
Parsing is always driven by a DatasetMetadata: values are coerced to the
declared kinds, extra file columns are dropped, missing declared columns are
an error.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .errors import ParseError, SchemaMismatch
from .metadata import ColumnKind, ColumnSchema, DatasetMetadata

_TRUE = {"true", "1"}
_FALSE = {"false", "0"}


def _coerce(text: str, column: ColumnSchema):
    if text == "" and column.nullable:
        return None
    if column.kind is ColumnKind.INTEGER:
        try:
            return int(text, 10)
        except ValueError:
            raise SchemaMismatch(f"column {column.name!r}: {text!r} is not an integer") from None
    if column.kind is ColumnKind.REAL:
        try:
            value = float(text)
        except ValueError:
            raise SchemaMismatch(f"column {column.name!r}: {text!r} is not a number") from None
        if not math.isfinite(value):
            raise SchemaMismatch(f"column {column.name!r}: non-finite value {text!r}")
        return value
    if column.kind is ColumnKind.BOOLEAN:
        lowered = text.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise SchemaMismatch(f"column {column.name!r}: {text!r} is not a boolean")
    return text  # categorical: membership is enforced by clamping, not parsing


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class Dataset:
    """Column names plus rows of value tuples, in declaration order."""

    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise SchemaMismatch(f"dataset has no column {name!r}") from None

    def iter_column(self, name: str) -> Iterator:
        idx = self.column_index(name)
        return (row[idx] for row in self.rows)

    @classmethod
    def empty(cls, metadata: DatasetMetadata) -> "Dataset":
        return cls(columns=metadata.column_names, rows=[])

    def to_csv(self) -> str:
        """RFC 4180 text: header row, CRLF line endings, UTF-8 friendly."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_render(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, metadata: DatasetMetadata,
                 max_rows: Optional[int] = None) -> "Dataset":
        """Parse CSV text against metadata.

        Raises ParseError for malformed CSV (no header, ragged rows, row cap
        exceeded) and SchemaMismatch for missing declared columns or values
        that cannot be coerced to the declared kind.
        """
        try:
            reader = csv.reader(io.StringIO(text))
            table = list(reader)
        except csv.Error as exc:
            raise ParseError(f"malformed CSV: {exc}") from None
        if not table:
            raise ParseError("CSV has no header row")
        header = [h.strip() for h in table[0]]
        positions = []
        for col in metadata.columns:
            if col.name not in header:
                raise SchemaMismatch(f"CSV is missing declared column {col.name!r}")
            positions.append((header.index(col.name), col))
        rows: list[tuple] = []
        width = len(header)
        for lineno, record in enumerate(table[1:], start=2):
            if not record:  # blank line
                continue
            if len(record) != width:
                raise ParseError(f"line {lineno}: expected {width} fields, found {len(record)}")
            rows.append(tuple(_coerce(record[pos], col) for pos, col in positions))
            if max_rows is not None and len(rows) > max_rows:
                raise ParseError(f"dataset exceeds the configured row cap of {max_rows}")
        return cls(columns=metadata.column_names, rows=rows)
