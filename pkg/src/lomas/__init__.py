"""Lomas: a gatekeeper for eyes-off data science.

Authorized users submit restricted aggregate queries over private tabular
datasets and receive only differentially private results; per-user
privacy-loss budgets are enforced atomically, dummy datasets generated from
public metadata are free to query, and every budget-consuming query is
archived.
"""

__version__ = "0.1.0"

from .budget import BudgetAccountant, BudgetLedgerEntry, PrivacyBudget, SpendOutcome
from .dataset import Dataset
from .dummy import generate_dummy
from .engine import (
    AggregateFunction,
    AggregateSpec,
    DpResult,
    FilterPredicate,
    PrivacyParams,
    QueryAst,
    clamp_dataset,
    estimate_cost,
    execute_dp,
    validate_query,
)
from .metadata import (
    ColumnKind,
    ColumnSchema,
    DatasetMetadata,
    parse_metadata,
    serialize_metadata,
    validate_column_reference,
)

__all__ = [
    "__version__",
    "AggregateFunction",
    "AggregateSpec",
    "BudgetAccountant",
    "BudgetLedgerEntry",
    "ColumnKind",
    "ColumnSchema",
    "Dataset",
    "DatasetMetadata",
    "DpResult",
    "FilterPredicate",
    "PrivacyBudget",
    "PrivacyParams",
    "QueryAst",
    "SpendOutcome",
    "clamp_dataset",
    "estimate_cost",
    "execute_dp",
    "generate_dummy",
    "parse_metadata",
    "serialize_metadata",
    "validate_column_reference",
    "validate_query",
]
