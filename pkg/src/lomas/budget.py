"""Privacy-loss budget arithmetic and the atomic check-and-spend ledger.

Budgets are (epsilon, delta) pairs kept in exact decimal arithmetic so that
any sequence of spends conserves ``initial = spent + remaining`` to the last
digit. Binary floats appear only at the JSON boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Callable, Union

from .errors import InvariantViolation, UnknownUserOrDataset

Number = Union[int, float, str, Decimal]


def _to_decimal(value: Number, field: str) -> Decimal:
    """Convert a boundary value to an exact Decimal.

    Floats go through ``str()`` (shortest round-trip repr), so a JSON 0.1
    becomes Decimal('0.1'), not the binary expansion.
    """
    if isinstance(value, bool):
        raise InvariantViolation(f"{field} must be numeric")
    if isinstance(value, Decimal):
        dec = value
    elif isinstance(value, (int, str)):
        try:
            dec = Decimal(value)
        except InvalidOperation:
            raise InvariantViolation(f"{field} is not a number: {value!r}") from None
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise InvariantViolation(f"{field} must be finite")
        dec = Decimal(str(value))
    else:
        raise InvariantViolation(f"{field} must be numeric, got {type(value).__name__}")
    if not dec.is_finite():
        raise InvariantViolation(f"{field} must be finite")
    return dec


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) pair, componentwise non-negative.

    Allocated budgets keep delta within [0, 1] (enforced where users are
    provisioned); cost values are plain componentwise sums and may
    arithmetically exceed 1, in which case they can never be afforded.
    """

    epsilon: Decimal
    delta: Decimal

    def __post_init__(self):
        if self.epsilon < 0:
            raise InvariantViolation("budget epsilon must be non-negative")
        if self.delta < 0:
            raise InvariantViolation("budget delta must be non-negative")

    @classmethod
    def of(cls, epsilon: Number, delta: Number) -> "PrivacyBudget":
        return cls(_to_decimal(epsilon, "epsilon"), _to_decimal(delta, "delta"))

    @classmethod
    def zero(cls) -> "PrivacyBudget":
        return cls(Decimal(0), Decimal(0))

    def __add__(self, other: "PrivacyBudget") -> "PrivacyBudget":
        return PrivacyBudget(self.epsilon + other.epsilon, self.delta + other.delta)

    def __sub__(self, other: "PrivacyBudget") -> "PrivacyBudget":
        return PrivacyBudget(self.epsilon - other.epsilon, self.delta - other.delta)

    def scaled(self, factor: int) -> "PrivacyBudget":
        return PrivacyBudget(self.epsilon * factor, self.delta * factor)

    def covers(self, cost: "PrivacyBudget") -> bool:
        """True when ``cost`` fits componentwise; both dimensions must fit."""
        return cost.epsilon <= self.epsilon and cost.delta <= self.delta

    def to_json_dict(self) -> dict:
        return {"epsilon": float(self.epsilon), "delta": float(self.delta)}

    def to_store_dict(self) -> dict:
        return {"epsilon": str(self.epsilon), "delta": str(self.delta)}

    @classmethod
    def from_dict(cls, doc: dict) -> "PrivacyBudget":
        if not isinstance(doc, dict) or "epsilon" not in doc or "delta" not in doc:
            raise InvariantViolation("budget requires epsilon and delta fields")
        return cls.of(doc["epsilon"], doc["delta"])


@dataclass(frozen=True)
class BudgetLedgerEntry:
    """Per-(user, dataset) budget state; remaining is always initial - spent."""

    initial: PrivacyBudget
    spent: PrivacyBudget

    def __post_init__(self):
        if self.spent.epsilon > self.initial.epsilon or self.spent.delta > self.initial.delta:
            raise InvariantViolation("spent budget exceeds initial allocation")

    @property
    def remaining(self) -> PrivacyBudget:
        return self.initial - self.spent


@dataclass(frozen=True)
class SpendOutcome:
    accepted: bool
    remaining: PrivacyBudget


class BudgetAccountant:
    """Atomic check-and-spend over the admin store's ledgers.

    Atomicity per (user, dataset) is inherited from the store's serialized
    mutation path: a spend is durably persisted before the outcome returns,
    and no interleaving of concurrent spends can overdraw either dimension.
    """

    def __init__(self, store):
        self._store = store

    def get_budget(self, user_name: str, dataset_name: str) -> BudgetLedgerEntry:
        """Raises UnknownUserOrDataset when no ledger entry exists."""
        return self._store.get_ledger(user_name, dataset_name)

    def check_and_spend(self, user_name: str, dataset_name: str,
                        cost: PrivacyBudget) -> SpendOutcome:
        if cost.epsilon < 0 or cost.delta < 0:
            raise InvariantViolation("cost must be componentwise non-negative")

        outcome: dict = {}

        def apply(entry: BudgetLedgerEntry) -> BudgetLedgerEntry:
            remaining = entry.remaining
            if remaining.covers(cost):
                updated = BudgetLedgerEntry(entry.initial, entry.spent + cost)
                outcome["value"] = SpendOutcome(True, updated.remaining)
                return updated
            outcome["value"] = SpendOutcome(False, remaining)
            return entry

        self._store.update_ledger(user_name, dataset_name, apply)
        return outcome["value"]


LedgerUpdate = Callable[[BudgetLedgerEntry], BudgetLedgerEntry]

__all__ = [
    "PrivacyBudget",
    "BudgetLedgerEntry",
    "SpendOutcome",
    "BudgetAccountant",
    "UnknownUserOrDataset",
]
