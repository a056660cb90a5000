"""Query builder mirroring the server's canonical wire form.

The client performs no query semantics of its own: these classes only
construct and round-trip the JSON the server executes, so what you send is
exactly what gets validated, priced, and archived server-side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

Literal = Union[str, int, float, bool]

AGGREGATE_FUNCTIONS = ("COUNT", "SUM", "MEAN", "VARIANCE")
COMPARATORS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Aggregate:
    function: str
    column: Optional[str] = None

    def __post_init__(self):
        if self.function not in AGGREGATE_FUNCTIONS:
            raise ValueError(f"unknown aggregate function {self.function!r}")
        if self.function == "COUNT" and self.column is not None:
            raise ValueError("COUNT takes no column")
        if self.function != "COUNT" and not self.column:
            raise ValueError(f"{self.function} requires a column")


@dataclass(frozen=True)
class Filter:
    column: str
    comparator: str
    literal: Literal

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")


@dataclass(frozen=True)
class QueryAst:
    """A restricted aggregate query in the server's canonical shape."""

    aggregates: tuple[Aggregate, ...]
    group_by: Optional[str] = None
    filters: tuple[Filter, ...] = field(default_factory=tuple)

    def to_wire(self) -> dict:
        return {
            "aggregates": [
                {"function": a.function, "column": a.column} for a in self.aggregates
            ],
            "group_by": self.group_by,
            "filters": [
                {"column": f.column, "comparator": f.comparator, "literal": f.literal}
                for f in self.filters
            ],
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "QueryAst":
        return cls(
            aggregates=tuple(
                Aggregate(node["function"], node.get("column"))
                for node in obj.get("aggregates", ())
            ),
            group_by=obj.get("group_by"),
            filters=tuple(
                Filter(node["column"], node["comparator"], node["literal"])
                for node in obj.get("filters", ())
            ),
        )


def count() -> Aggregate:
    return Aggregate("COUNT")


def sum_of(column: str) -> Aggregate:
    return Aggregate("SUM", column)


def mean_of(column: str) -> Aggregate:
    return Aggregate("MEAN", column)


def variance_of(column: str) -> Aggregate:
    return Aggregate("VARIANCE", column)


def where(column: str, comparator: str, literal: Literal) -> Filter:
    return Filter(column, comparator, literal)


def query(*aggregates: Aggregate, group_by: Optional[str] = None,
          filters: tuple[Filter, ...] = ()) -> QueryAst:
    """Convenience constructor: query(mean_of("bill_length"), group_by="island")."""
    return QueryAst(aggregates=tuple(aggregates), group_by=group_by,
                    filters=tuple(filters))
