"""Public dataset metadata: parsing, validation, and column lookup.

Metadata documents are YAML-compatible key-value trees (JSON with the same
shape is accepted). They are the single source of truth for query
validation, sensitivity bounds, and dummy-data generation, so every invariant
is enforced at parse time.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import yaml

from .errors import (
    InvariantViolation,
    KindMismatch,
    MalformedDocument,
    MissingField,
    UnknownColumn,
)

_IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ColumnKind(str, Enum):
    INTEGER = "integer"
    REAL = "real"
    CATEGORICAL = "categorical"
    BOOLEAN = "boolean"


NUMERIC_KINDS = frozenset({ColumnKind.INTEGER, ColumnKind.REAL})
ALL_KINDS = frozenset(ColumnKind)


def _check_identifier(value, what: str) -> str:
    if not isinstance(value, str) or not _IDENTIFIER.match(value):
        raise InvariantViolation(f"{what} must be a non-empty identifier, got {value!r}")
    return value


def _check_bound(value, column: str, side: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvariantViolation(f"column {column}: {side} bound must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise InvariantViolation(f"column {column}: {side} bound must be finite")
    return value


@dataclass(frozen=True)
class ColumnSchema:
    """One column: kind plus the constraints needed for DP and dummy data.

    Numeric kinds carry inclusive finite bounds; categorical kinds carry an
    ordered, duplicate-free category list; booleans need neither.
    """

    name: str
    kind: ColumnKind
    lower: Optional[float] = None
    upper: Optional[float] = None
    categories: Optional[tuple[str, ...]] = None
    nullable: bool = False

    def __post_init__(self):
        _check_identifier(self.name, "column name")
        if not isinstance(self.kind, ColumnKind):
            raise InvariantViolation(f"column {self.name}: unknown kind {self.kind!r}")
        if self.kind in NUMERIC_KINDS:
            if self.lower is None or self.upper is None:
                raise MissingField(f"column {self.name}: numeric columns require lower and upper bounds")
            lower = _check_bound(self.lower, self.name, "lower")
            upper = _check_bound(self.upper, self.name, "upper")
            if self.kind is ColumnKind.INTEGER:
                if lower != int(lower) or upper != int(upper):
                    raise InvariantViolation(f"column {self.name}: integer bounds must be integers")
                lower, upper = float(int(lower)), float(int(upper))
            if lower > upper:
                raise InvariantViolation(f"column {self.name}: lower {lower} > upper {upper}")
            object.__setattr__(self, "lower", lower)
            object.__setattr__(self, "upper", upper)
            if self.categories is not None:
                raise InvariantViolation(f"column {self.name}: numeric columns take no categories")
        elif self.kind is ColumnKind.CATEGORICAL:
            if self.lower is not None or self.upper is not None:
                raise InvariantViolation(f"column {self.name}: categorical columns take no bounds")
            if self.categories is None:
                raise MissingField(f"column {self.name}: categorical columns require categories")
            cats = tuple(self.categories)
            if not cats:
                raise InvariantViolation(f"column {self.name}: categories must be non-empty")
            if any(not isinstance(c, str) for c in cats):
                raise InvariantViolation(f"column {self.name}: categories must be strings")
            if len(set(cats)) != len(cats):
                raise InvariantViolation(f"column {self.name}: duplicate categories")
            object.__setattr__(self, "categories", cats)
        else:  # boolean
            if self.lower is not None or self.upper is not None or self.categories is not None:
                raise InvariantViolation(f"column {self.name}: boolean columns take no bounds or categories")
        if not isinstance(self.nullable, bool):
            raise InvariantViolation(f"column {self.name}: nullable must be boolean")


@dataclass(frozen=True)
class DatasetMetadata:
    """Public schema of one dataset, including the contribution bound."""

    dataset_name: str
    max_contributions: int
    columns: tuple[ColumnSchema, ...] = field(default_factory=tuple)

    def __post_init__(self):
        _check_identifier(self.dataset_name, "dataset_name")
        if isinstance(self.max_contributions, bool) or not isinstance(self.max_contributions, int):
            raise InvariantViolation("max_contributions must be an integer")
        if self.max_contributions < 1:
            raise InvariantViolation("max_contributions must be >= 1")
        cols = tuple(self.columns)
        if not cols:
            raise InvariantViolation("metadata requires at least one column")
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise InvariantViolation("duplicate column names")
        object.__setattr__(self, "columns", cols)

    def column(self, name: str) -> Optional[ColumnSchema]:
        for col in self.columns:
            if col.name == name:
                return col
        return None

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def has_nullable_columns(self) -> bool:
        return any(c.nullable for c in self.columns)


def _column_from_tree(node) -> ColumnSchema:
    if not isinstance(node, dict):
        raise MalformedDocument(f"column entry must be a mapping, got {type(node).__name__}")
    if "name" not in node:
        raise MissingField("column entry missing 'name'")
    if "kind" not in node:
        raise MissingField(f"column {node.get('name')!r} missing 'kind'")
    kind_raw = node["kind"]
    try:
        kind = ColumnKind(kind_raw)
    except ValueError:
        raise InvariantViolation(f"column {node['name']!r}: unknown kind {kind_raw!r}") from None
    known = {"name", "kind", "lower", "upper", "categories", "nullable"}
    extra = set(node) - known
    if extra:
        raise MalformedDocument(f"column {node['name']!r}: unknown fields {sorted(extra)}")
    categories = node.get("categories")
    if categories is not None:
        if not isinstance(categories, list):
            raise MalformedDocument(f"column {node['name']!r}: categories must be a list")
        categories = tuple(str(c) if isinstance(c, (int, float, bool)) else c for c in categories)
    return ColumnSchema(
        name=node["name"],
        kind=kind,
        lower=node.get("lower"),
        upper=node.get("upper"),
        categories=categories,
        nullable=node.get("nullable", False),
    )


def metadata_from_tree(tree) -> DatasetMetadata:
    """Build metadata from an already-parsed key-value tree (e.g. JSON body)."""
    if not isinstance(tree, dict):
        raise MalformedDocument("metadata document must be a mapping at the top level")
    known = {"dataset_name", "max_contributions", "columns"}
    extra = set(tree) - known
    if extra:
        raise MalformedDocument(f"unknown top-level fields {sorted(extra)}")
    for required in ("dataset_name", "max_contributions", "columns"):
        if required not in tree:
            raise MissingField(f"metadata missing '{required}'")
    columns = tree["columns"]
    if not isinstance(columns, list):
        raise MalformedDocument("'columns' must be a list")
    return DatasetMetadata(
        dataset_name=tree["dataset_name"],
        max_contributions=tree["max_contributions"],
        columns=tuple(_column_from_tree(c) for c in columns),
    )


def parse_metadata(document: str) -> DatasetMetadata:
    """Parse a metadata document (YAML or JSON text) into validated metadata."""
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"metadata document is not UTF-8: {exc}") from None
    if not isinstance(document, str):
        raise MalformedDocument("metadata document must be text")
    try:
        tree = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise MalformedDocument(f"metadata document is not well-formed: {exc}") from None
    return metadata_from_tree(tree)


def metadata_to_tree(metadata: DatasetMetadata) -> dict:
    """Inverse of metadata_from_tree; omits fields that do not apply."""
    columns = []
    for col in metadata.columns:
        node: dict = {"name": col.name, "kind": col.kind.value}
        if col.kind in NUMERIC_KINDS:
            if col.kind is ColumnKind.INTEGER:
                node["lower"], node["upper"] = int(col.lower), int(col.upper)
            else:
                node["lower"], node["upper"] = col.lower, col.upper
        if col.kind is ColumnKind.CATEGORICAL:
            node["categories"] = list(col.categories)
        if col.nullable:
            node["nullable"] = True
        columns.append(node)
    return {
        "dataset_name": metadata.dataset_name,
        "max_contributions": metadata.max_contributions,
        "columns": columns,
    }


def serialize_metadata(metadata: DatasetMetadata) -> str:
    """Render metadata back to YAML text; parse(serialize(m)) == m."""
    return yaml.safe_dump(metadata_to_tree(metadata), sort_keys=False)


def validate_column_reference(metadata: DatasetMetadata, column: str,
                              required_kinds: Iterable[ColumnKind]) -> ColumnSchema:
    """Resolve a column reference, checking existence and kind compatibility."""
    schema = metadata.column(column)
    if schema is None:
        raise UnknownColumn(f"column {column!r} not in dataset {metadata.dataset_name!r}")
    kinds = frozenset(required_kinds)
    if schema.kind not in kinds:
        allowed = ", ".join(sorted(k.value for k in kinds))
        raise KindMismatch(f"column {column!r} has kind {schema.kind.value}, expected one of: {allowed}")
    return schema
