"""Typed exceptions mirroring the service's machine-readable error codes."""

from __future__ import annotations

from typing import Optional


class LomasClientError(Exception):
    """Base class: carries the server's code and message (plus HTTP status)."""

    def __init__(self, code: str, message: str, status: int,
                 remaining: Optional[dict] = None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
        self.status = status
        self.remaining = remaining


class AccessDeniedError(LomasClientError):
    pass


class QueryInProgressError(LomasClientError):
    pass


class ValidationFailedError(LomasClientError):
    pass


class InsufficientBudgetError(LomasClientError):
    pass


class DatasetUnavailableError(LomasClientError):
    pass


class UnknownDatasetError(LomasClientError):
    pass


class TransportFailure(LomasClientError):
    """The server could not be reached or returned an undecodable body."""


_BY_CODE = {
    "AccessDenied": AccessDeniedError,
    "QueryInProgress": QueryInProgressError,
    "ValidationFailed": ValidationFailedError,
    "InsufficientBudget": InsufficientBudgetError,
    "DatasetUnavailable": DatasetUnavailableError,
    "UnknownDataset": UnknownDatasetError,
    "UnknownUserOrDataset": UnknownDatasetError,
}


def error_from_response(status: int, body: dict) -> LomasClientError:
    code = body.get("code", "InternalError")
    message = body.get("message", "")
    cls = _BY_CODE.get(code, LomasClientError)
    return cls(code, message, status, remaining=body.get("remaining"))
