"""Client library for the lomas gatekeeper service."""

__version__ = "0.1.0"

from .client import Budget, Client, QueryResult
from .errors import (
    AccessDeniedError,
    DatasetUnavailableError,
    InsufficientBudgetError,
    LomasClientError,
    QueryInProgressError,
    TransportFailure,
    UnknownDatasetError,
    ValidationFailedError,
)
from .queries import (
    Aggregate,
    Filter,
    QueryAst,
    count,
    mean_of,
    query,
    sum_of,
    variance_of,
    where,
)

__all__ = [
    "__version__",
    "Aggregate",
    "AccessDeniedError",
    "Budget",
    "Client",
    "DatasetUnavailableError",
    "Filter",
    "InsufficientBudgetError",
    "LomasClientError",
    "QueryAst",
    "QueryInProgressError",
    "QueryResult",
    "TransportFailure",
    "UnknownDatasetError",
    "ValidationFailedError",
    "count",
    "mean_of",
    "query",
    "sum_of",
    "variance_of",
    "where",
]
