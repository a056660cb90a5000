"""Restricted aggregate queries and their differentially private execution.

The query surface is a small AST (COUNT / SUM / MEAN / VARIANCE, optional
group-by over a categorical column, optional row filters). Everything
DP-relevant happens below it:

* validation against public metadata fixes the mechanism (Laplace iff
  delta = 0) and rejects anything that cannot be executed with a guarantee;
* MEAN and VARIANCE decompose into the primitive noisy aggregates SUM,
  SUM_SQ and COUNT, which are noised once and recombined as post-processing;
* each distinct primitive is charged the full requested (epsilon, delta),
  so the total cost is k * (epsilon, delta) under sequential composition;
* group-by results carry one entry per *declared* category — including
  empty ones — so the key set never leaks data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .budget import PrivacyBudget
from .dataset import Dataset
from .errors import (
    InvalidPrivacyParams,
    InvariantViolation,
    KindMismatch,
    NullableUnsupported,
    UnknownCategory,
    UnknownColumn,
)
from .mechanisms import (
    gaussian_sigma,
    gaussian_sigma_relaxed,
    laplace_scale,
    sample_gaussian,
    sample_laplace,
)
from .metadata import (
    NUMERIC_KINDS,
    ColumnKind,
    ColumnSchema,
    DatasetMetadata,
    validate_column_reference,
)

Literal = Union[str, int, float, bool]

COMPARATORS = ("=", "!=", "<", "<=", ">", ">=")
_EQUALITY_ONLY = ("=", "!=")


class AggregateFunction(str, Enum):
    COUNT = "COUNT"
    SUM = "SUM"
    MEAN = "MEAN"
    VARIANCE = "VARIANCE"


class PrimitiveKind(str, Enum):
    COUNT = "COUNT"
    SUM = "SUM"
    SUMSQ = "SUMSQ"


@dataclass(frozen=True)
class AggregateSpec:
    """One requested aggregate; COUNT takes no column, the rest require one."""

    function: AggregateFunction
    column: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.function, AggregateFunction):
            raise InvariantViolation(f"unknown aggregate function {self.function!r}")
        if self.function is AggregateFunction.COUNT:
            if self.column is not None:
                raise InvariantViolation("COUNT takes no column")
        elif not self.column:
            raise InvariantViolation(f"{self.function.value} requires a column")

    @property
    def label(self) -> str:
        if self.function is AggregateFunction.COUNT:
            return "count"
        return f"{self.function.value.lower()}_{self.column}"


@dataclass(frozen=True)
class FilterPredicate:
    """Row-wise predicate; equality-only for categorical and boolean columns."""

    column: str
    comparator: str
    literal: Literal

    def __post_init__(self):
        if not self.column or not isinstance(self.column, str):
            raise InvariantViolation("filter requires a column name")
        if self.comparator not in COMPARATORS:
            raise InvariantViolation(f"unknown comparator {self.comparator!r}")


@dataclass(frozen=True)
class QueryAst:
    """A restricted aggregate query over one dataset."""

    aggregates: tuple[AggregateSpec, ...]
    group_by: Optional[str] = None
    filters: tuple[FilterPredicate, ...] = ()

    def __post_init__(self):
        aggs = tuple(self.aggregates)
        if not aggs:
            raise InvariantViolation("query requires at least one aggregate")
        seen = set()
        for agg in aggs:
            key = (agg.function, agg.column)
            if key in seen:
                raise InvariantViolation(f"duplicate aggregate {agg.label}")
            seen.add(key)
        object.__setattr__(self, "aggregates", aggs)
        object.__setattr__(self, "filters", tuple(self.filters))


@dataclass(frozen=True)
class PrivacyParams:
    """Requested per-primitive privacy parameters.

    Range checks live in validate_query so that invalid requests surface as
    InvalidPrivacyParams there, not as construction failures.
    """

    epsilon: float
    delta: float = 0.0


@dataclass(frozen=True)
class Primitive:
    """A primitive noisy aggregate: the unit that actually receives noise."""

    kind: PrimitiveKind
    column: Optional[str] = None

    @property
    def label(self) -> str:
        if self.kind is PrimitiveKind.COUNT:
            return "count"
        return f"{self.kind.value.lower()}_{self.column}"


@dataclass(frozen=True)
class PrimitivePlan:
    primitive: Primitive
    sensitivity: float
    noise_scale: float


@dataclass(frozen=True)
class ValidatedQuery:
    """A query that passed validation, with mechanism and noise scales fixed."""

    ast: QueryAst
    metadata: DatasetMetadata
    params: PrivacyParams
    mechanism: str  # "laplace" | "gaussian"
    plans: tuple[PrimitivePlan, ...]

    @property
    def cost(self) -> PrivacyBudget:
        return estimate_cost(self.ast, self.params)


# ---------------------------------------------------------------------------
# wire codec
# ---------------------------------------------------------------------------

def query_to_wire(ast: QueryAst) -> dict:
    return {
        "aggregates": [
            {"function": a.function.value, "column": a.column} for a in ast.aggregates
        ],
        "group_by": ast.group_by,
        "filters": [
            {"column": f.column, "comparator": f.comparator, "literal": f.literal}
            for f in ast.filters
        ],
    }


def query_from_wire(obj) -> QueryAst:
    """Decode the canonical JSON form; structural problems raise InvariantViolation."""
    if not isinstance(obj, dict):
        raise InvariantViolation("query must be a JSON object")
    extra = set(obj) - {"aggregates", "group_by", "filters"}
    if extra:
        raise InvariantViolation(f"unknown query fields {sorted(extra)}")
    raw_aggs = obj.get("aggregates")
    if not isinstance(raw_aggs, list):
        raise InvariantViolation("query requires an 'aggregates' list")
    aggregates = []
    for node in raw_aggs:
        if not isinstance(node, dict) or "function" not in node:
            raise InvariantViolation("each aggregate requires a 'function'")
        try:
            function = AggregateFunction(node["function"])
        except ValueError:
            raise InvariantViolation(f"unknown aggregate function {node['function']!r}") from None
        aggregates.append(AggregateSpec(function=function, column=node.get("column")))
    group_by = obj.get("group_by")
    if group_by is not None and not isinstance(group_by, str):
        raise InvariantViolation("group_by must be a column name or null")
    filters = []
    for node in obj.get("filters") or ():
        if not isinstance(node, dict):
            raise InvariantViolation("each filter must be an object")
        missing = {"column", "comparator", "literal"} - set(node)
        if missing:
            raise InvariantViolation(f"filter missing fields {sorted(missing)}")
        filters.append(FilterPredicate(node["column"], node["comparator"], node["literal"]))
    return QueryAst(aggregates=tuple(aggregates), group_by=group_by, filters=tuple(filters))


# ---------------------------------------------------------------------------
# decomposition, sensitivity, cost
# ---------------------------------------------------------------------------

def decompose_aggregate(agg: AggregateSpec) -> tuple[Primitive, ...]:
    """Map an aggregate to the primitives it needs, in noising order."""
    if agg.function is AggregateFunction.COUNT:
        return (Primitive(PrimitiveKind.COUNT),)
    if agg.function is AggregateFunction.SUM:
        return (Primitive(PrimitiveKind.SUM, agg.column),)
    if agg.function is AggregateFunction.MEAN:
        return (Primitive(PrimitiveKind.SUM, agg.column), Primitive(PrimitiveKind.COUNT))
    return (
        Primitive(PrimitiveKind.SUMSQ, agg.column),
        Primitive(PrimitiveKind.SUM, agg.column),
        Primitive(PrimitiveKind.COUNT),
    )


def decompose_query(ast: QueryAst) -> tuple[Primitive, ...]:
    """All primitives for a query, deduplicated, first-appearance order.

    Shared primitives across aggregates are noised once and reused; the
    reuse is free by post-processing.
    """
    out: list[Primitive] = []
    seen = set()
    for agg in ast.aggregates:
        for prim in decompose_aggregate(agg):
            if prim not in seen:
                seen.add(prim)
                out.append(prim)
    return tuple(out)


def squared_bounds(column: ColumnSchema) -> tuple[float, float]:
    """Bounds of the squared, clamped column (the SUM_SQ value range)."""
    lower, upper = column.lower, column.upper
    if lower <= 0.0 <= upper:
        return 0.0, max(lower * lower, upper * upper)
    lo, hi = abs(lower), abs(upper)
    if lo > hi:
        lo, hi = hi, lo
    return lo * lo, hi * hi


def primitive_sensitivity(primitive: Primitive, metadata: DatasetMetadata) -> float:
    """Bounded-contribution sensitivity: one unit adds or removes up to
    max_contributions rows."""
    m = metadata.max_contributions
    if primitive.kind is PrimitiveKind.COUNT:
        return float(m)
    column = validate_column_reference(metadata, primitive.column, NUMERIC_KINDS)
    if primitive.kind is PrimitiveKind.SUM:
        return m * max(abs(column.lower), abs(column.upper))
    _, hi = squared_bounds(column)
    return m * hi


def sensitivity(agg: AggregateSpec, metadata: DatasetMetadata) -> float:
    """Sensitivity of a primitive noisy aggregate (COUNT or SUM).

    MEAN and VARIANCE have no sensitivity of their own; decompose them first.
    """
    if agg.function is AggregateFunction.COUNT:
        return primitive_sensitivity(Primitive(PrimitiveKind.COUNT), metadata)
    if agg.function is AggregateFunction.SUM:
        return primitive_sensitivity(Primitive(PrimitiveKind.SUM, agg.column), metadata)
    raise InvariantViolation(
        f"{agg.function.value} is a derived aggregate; decompose it into primitives first")


def estimate_cost(ast: QueryAst, params: PrivacyParams) -> PrivacyBudget:
    """Total budget cost: k * (epsilon, delta), k = number of distinct primitives.

    Exact decimal arithmetic; group-by does not multiply k (per-bin noise is
    covered by the primitive's L1 sensitivity over the histogram vector).
    Estimation never touches any ledger.
    """
    k = len(decompose_query(ast))
    return PrivacyBudget.of(params.epsilon, params.delta).scaled(k)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _check_params(params: PrivacyParams, *, allow_large_epsilon: bool) -> str:
    eps, delta = params.epsilon, params.delta
    if isinstance(eps, bool) or not isinstance(eps, (int, float)) or not math.isfinite(eps) or eps <= 0:
        raise InvalidPrivacyParams(f"epsilon must be positive and finite, got {eps!r}")
    if isinstance(delta, bool) or not isinstance(delta, (int, float)) or not (0 <= delta < 1):
        raise InvalidPrivacyParams(f"delta must lie in [0, 1), got {delta!r}")
    if delta == 0:
        return "laplace"
    if eps > 1 and not allow_large_epsilon:
        raise InvalidPrivacyParams(
            "gaussian mechanism is only valid for epsilon <= 1; "
            "use delta = 0 (Laplace) for larger epsilons")
    return "gaussian"


def _check_filter(pred: FilterPredicate, metadata: DatasetMetadata) -> None:
    schema = metadata.column(pred.column)
    if schema is None:
        raise UnknownColumn(f"filter references unknown column {pred.column!r}")
    lit = pred.literal
    if schema.kind in NUMERIC_KINDS:
        if isinstance(lit, bool) or not isinstance(lit, (int, float)):
            raise KindMismatch(f"filter on {pred.column!r} requires a numeric literal")
    elif schema.kind is ColumnKind.CATEGORICAL:
        if pred.comparator not in _EQUALITY_ONLY:
            raise KindMismatch(f"categorical column {pred.column!r} supports only = and !=")
        if not isinstance(lit, str):
            raise KindMismatch(f"filter on {pred.column!r} requires a string literal")
    else:
        if pred.comparator not in _EQUALITY_ONLY:
            raise KindMismatch(f"boolean column {pred.column!r} supports only = and !=")
        if not isinstance(lit, bool):
            raise KindMismatch(f"filter on {pred.column!r} requires a boolean literal")


def validate_query(ast: QueryAst, metadata: DatasetMetadata, params: PrivacyParams,
                   *, allow_large_epsilon: bool = False) -> ValidatedQuery:
    """Check a query against metadata and fix the execution plan.

    allow_large_epsilon relaxes the Gaussian epsilon <= 1 restriction and is
    reserved for dummy-data executions, where no guarantee is at stake.
    """
    mechanism = _check_params(params, allow_large_epsilon=allow_large_epsilon)
    if metadata.has_nullable_columns:
        raise NullableUnsupported(
            f"dataset {metadata.dataset_name!r} declares nullable columns, "
            "which this engine does not support yet")
    for agg in ast.aggregates:
        if agg.function is not AggregateFunction.COUNT:
            validate_column_reference(metadata, agg.column, NUMERIC_KINDS)
    if ast.group_by is not None:
        validate_column_reference(metadata, ast.group_by, {ColumnKind.CATEGORICAL})
    for pred in ast.filters:
        _check_filter(pred, metadata)

    plans = []
    for prim in decompose_query(ast):
        sens = primitive_sensitivity(prim, metadata)
        if mechanism == "laplace":
            scale = laplace_scale(sens, params.epsilon)
        elif allow_large_epsilon:
            scale = gaussian_sigma_relaxed(sens, params.epsilon, params.delta)
        else:
            scale = gaussian_sigma(sens, params.epsilon, params.delta)
        plans.append(PrimitivePlan(prim, sens, scale))
    return ValidatedQuery(ast=ast, metadata=metadata, params=params,
                          mechanism=mechanism, plans=tuple(plans))


# ---------------------------------------------------------------------------
# clamping
# ---------------------------------------------------------------------------

def clamp_dataset(rows: Dataset, metadata: DatasetMetadata) -> Dataset:
    """Clamp numeric values into their declared bounds; reject undeclared
    categories. Idempotent; None values (nullable columns) pass through."""
    clampers = []
    for column in metadata.columns:
        idx = rows.column_index(column.name)
        clampers.append((idx, column))
    out_rows = []
    for row in rows.rows:
        values = list(row)
        for idx, column in clampers:
            v = values[idx]
            if v is None:
                continue
            if column.kind in NUMERIC_KINDS:
                if v < column.lower:
                    v = column.lower
                elif v > column.upper:
                    v = column.upper
                values[idx] = int(v) if column.kind is ColumnKind.INTEGER else float(v)
            elif column.kind is ColumnKind.CATEGORICAL:
                if v not in column.categories:
                    raise UnknownCategory(
                        f"value {v!r} not in declared categories of column {column.name!r}")
        out_rows.append(tuple(values))
    return Dataset(columns=rows.columns, rows=out_rows)


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

_COMPARE = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}

#: noisy counts at or below this are treated as empty when dividing
COUNT_DIVISION_FLOOR = 0.5

ResultKey = Union[str, tuple[str, str]]


@dataclass(frozen=True)
class DpResult:
    """Noised result values plus the exact budget that executing them cost."""

    values: dict
    charged_cost: PrivacyBudget


def _filter_rows(rows: Dataset, filters: tuple[FilterPredicate, ...]) -> list[tuple]:
    if not filters:
        return rows.rows
    compiled = [(rows.column_index(f.column), _COMPARE[f.comparator], f.literal) for f in filters]
    kept = []
    for row in rows.rows:
        if all(op(row[idx], lit) for idx, op, lit in compiled):
            kept.append(row)
    return kept


def _exact_primitive(primitive: Primitive, rows: list[tuple], col_index: dict) -> float:
    if primitive.kind is PrimitiveKind.COUNT:
        return float(len(rows))
    idx = col_index[primitive.column]
    if primitive.kind is PrimitiveKind.SUM:
        return float(sum(row[idx] for row in rows))
    return float(sum(row[idx] * row[idx] for row in rows))


def _derive(agg: AggregateSpec, noisy: dict) -> Optional[float]:
    """Recombine noisy primitives; pure post-processing."""
    if agg.function is AggregateFunction.COUNT:
        return noisy[Primitive(PrimitiveKind.COUNT)]
    if agg.function is AggregateFunction.SUM:
        return noisy[Primitive(PrimitiveKind.SUM, agg.column)]
    count = noisy[Primitive(PrimitiveKind.COUNT)]
    if count <= COUNT_DIVISION_FLOOR:
        return None
    mean = noisy[Primitive(PrimitiveKind.SUM, agg.column)] / count
    if agg.function is AggregateFunction.MEAN:
        return mean
    sumsq = noisy[Primitive(PrimitiveKind.SUMSQ, agg.column)]
    return sumsq / count - mean * mean


def execute_dp(ast: QueryAst, rows: Dataset, metadata: DatasetMetadata,
               params: PrivacyParams, rng, *,
               allow_large_epsilon: bool = False) -> DpResult:
    """Execute a validated query on clamped rows with independent noise per
    primitive (per bin under group-by).

    The result key set under group-by is exactly the declared category set,
    whatever the data contains. charged_cost always equals
    estimate_cost(ast, params).
    """
    plan = validate_query(ast, metadata, params, allow_large_epsilon=allow_large_epsilon)
    sample = sample_laplace if plan.mechanism == "laplace" else sample_gaussian
    col_index = {name: rows.column_index(name) for name in metadata.column_names}
    filtered = _filter_rows(rows, ast.filters)

    def noisy_primitives(subset: list[tuple]) -> dict:
        return {
            p.primitive: _exact_primitive(p.primitive, subset, col_index)
            + sample(rng, p.noise_scale)
            for p in plan.plans
        }

    values: dict = {}
    if ast.group_by is None:
        noisy = noisy_primitives(filtered)
        for agg in ast.aggregates:
            values[agg.label] = _derive(agg, noisy)
    else:
        group_idx = col_index[ast.group_by]
        categories = metadata.column(ast.group_by).categories
        buckets: dict = {cat: [] for cat in categories}
        for row in filtered:
            # clamped data cannot hold undeclared categories
            buckets[row[group_idx]].append(row)
        for cat in categories:
            noisy = noisy_primitives(buckets[cat])
            for agg in ast.aggregates:
                values[(cat, agg.label)] = _derive(agg, noisy)

    return DpResult(values=values, charged_cost=estimate_cost(ast, params))


def result_values_to_wire(values: dict, grouped: bool) -> dict:
    """Flat {label: value} without group-by, nested {category: {label: value}} with."""
    if not grouped:
        return dict(values)
    nested: dict = {}
    for (category, label), value in values.items():
        nested.setdefault(category, {})[label] = value
    return nested
