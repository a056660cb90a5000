"""Error taxonomy shared across the service.

Every error carries a stable machine-readable ``code`` (its class name) so
transport layers and clients can dispatch on it without matching message
strings.
"""

from __future__ import annotations


class LomasError(Exception):
    """Base class for all service-defined errors."""

    code = "InternalError"

    def __init__(self, message: str = ""):
        self.message = message or self.code
        super().__init__(self.message)


# ---------------------------------------------------------------------------
# metadata catalog
# ---------------------------------------------------------------------------

class MalformedDocument(LomasError):
    """Document is not a well-formed key-value tree."""
    code = "MalformedDocument"


class MissingField(LomasError):
    """A required field is absent (e.g. numeric column without bounds)."""
    code = "MissingField"


class InvariantViolation(LomasError):
    """A structural invariant is broken (e.g. lower > upper)."""
    code = "InvariantViolation"


class UnknownColumn(LomasError):
    code = "UnknownColumn"


class KindMismatch(LomasError):
    """Column exists but its kind is incompatible with the requested use."""
    code = "KindMismatch"


# ---------------------------------------------------------------------------
# dp engine
# ---------------------------------------------------------------------------

class InvalidPrivacyParams(LomasError):
    code = "InvalidPrivacyParams"


class NullableUnsupported(LomasError):
    """Nullable columns are parseable but not queryable in v1."""
    code = "NullableUnsupported"


class UnknownCategory(LomasError):
    """A categorical value falls outside the declared category set."""
    code = "UnknownCategory"


# ---------------------------------------------------------------------------
# dataset store
# ---------------------------------------------------------------------------

class NotFound(LomasError):
    code = "NotFound"


class TransportError(LomasError):
    code = "TransportError"


class ParseError(LomasError):
    code = "ParseError"


class SchemaMismatch(LomasError):
    code = "SchemaMismatch"


# ---------------------------------------------------------------------------
# admin store
# ---------------------------------------------------------------------------

class UnknownUserOrDataset(LomasError):
    code = "UnknownUserOrDataset"


class DuplicateUserDataset(LomasError):
    code = "DuplicateUserDataset"


class UnknownDataset(LomasError):
    code = "UnknownDataset"


class DuplicateDataset(LomasError):
    code = "DuplicateDataset"


class UnknownCollection(LomasError):
    code = "UnknownCollection"


class StoreLocked(LomasError):
    """Another process holds the exclusive store lock."""
    code = "StoreLocked"


# ---------------------------------------------------------------------------
# gatekeeper service
# ---------------------------------------------------------------------------

class AccessDenied(LomasError):
    code = "AccessDenied"


class QueryInProgress(LomasError):
    """The caller already has a budget-consuming query in flight."""
    code = "QueryInProgress"


class ValidationFailed(LomasError):
    code = "ValidationFailed"


class InsufficientBudget(LomasError):
    code = "InsufficientBudget"

    def __init__(self, message: str = "", remaining=None):
        super().__init__(message)
        self.remaining = remaining


class DatasetUnavailable(LomasError):
    """Private data could not be fetched; no budget was spent."""
    code = "DatasetUnavailable"


class InternalError(LomasError):
    code = "InternalError"
