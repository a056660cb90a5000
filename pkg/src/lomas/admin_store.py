"""Embedded document store for users, datasets, metadata, and query archives.

Collections persist as JSON-lines files under one store directory. Mutable
collections (users, datasets, metadata) are rewritten atomically
(temp file + rename + fsync); archives are an append-only log with one
fsynced line per entry. A single writer holds an exclusive flock on the
store; read-only opens skip the lock and stay consistent thanks to the
atomic renames.
"""

from __future__ import annotations

import fcntl
import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Optional

from .budget import BudgetLedgerEntry, PrivacyBudget
from .dataset_store import StorageLocator
from .errors import (
    DuplicateDataset,
    DuplicateUserDataset,
    InvariantViolation,
    MalformedDocument,
    StoreLocked,
    UnknownCollection,
    UnknownDataset,
    UnknownUserOrDataset,
)
from .metadata import DatasetMetadata, metadata_from_tree, metadata_to_tree, parse_metadata

COLLECTIONS = ("users", "datasets", "metadata", "archives")

RECONSTRUCTED_FLAG = "reconstructed"


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class UserRecord:
    """One user and their per-dataset ledgers.

    may_query is runtime state guarding one budget-consuming query at a
    time; it always reloads as True (a crash must not wedge the user).
    """

    user_name: str
    datasets: dict[str, BudgetLedgerEntry] = field(default_factory=dict)
    may_query: bool = True

    def to_doc(self) -> dict:
        return {
            "user_name": self.user_name,
            "datasets": {
                name: {
                    "initial": entry.initial.to_store_dict(),
                    "spent": entry.spent.to_store_dict(),
                }
                for name, entry in self.datasets.items()
            },
            "may_query": self.may_query,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "UserRecord":
        datasets = {
            name: BudgetLedgerEntry(
                initial=PrivacyBudget.from_dict(node["initial"]),
                spent=PrivacyBudget.from_dict(node["spent"]),
            )
            for name, node in doc.get("datasets", {}).items()
        }
        return cls(user_name=doc["user_name"], datasets=datasets, may_query=True)


@dataclass(frozen=True)
class DatasetRecord:
    dataset_name: str
    locator: StorageLocator
    metadata: DatasetMetadata


@dataclass
class ArchiveEntry:
    """Immutable record of one executed budget-consuming query."""

    user_name: str
    dataset_name: str
    query: Optional[dict]
    params: Optional[dict]
    charged_cost: PrivacyBudget
    result: Optional[dict]
    timestamp: str = ""
    id: str = ""
    flags: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "user_name": self.user_name,
            "dataset_name": self.dataset_name,
            "query": self.query,
            "params": self.params,
            "charged_cost": self.charged_cost.to_store_dict(),
            "result": self.result,
            "timestamp": self.timestamp,
            "flags": list(self.flags),
        }

    def to_wire(self) -> dict:
        doc = self.to_doc()
        doc["charged_cost"] = self.charged_cost.to_json_dict()
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "ArchiveEntry":
        return cls(
            id=doc["id"],
            user_name=doc["user_name"],
            dataset_name=doc["dataset_name"],
            query=doc.get("query"),
            params=doc.get("params"),
            charged_cost=PrivacyBudget.from_dict(doc["charged_cost"]),
            result=doc.get("result"),
            timestamp=doc["timestamp"],
            flags=tuple(doc.get("flags", ())),
        )


def _fsync_dir(path: str) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class AdminStore:
    """Thread-safe persistence for the administration collections."""

    def __init__(self, path: str, writable: bool = True):
        self.path = os.path.abspath(path)
        self.writable = writable
        os.makedirs(self.path, exist_ok=True)
        self._lock = threading.RLock()
        self._flock_fd: Optional[int] = None
        if writable:
            self._acquire_flock()
        self._users: dict[str, UserRecord] = {}
        self._datasets: dict[str, StorageLocator] = {}
        self._metadata: dict[str, DatasetMetadata] = {}
        self._archives: list[ArchiveEntry] = []
        self._load()

    # -- lifecycle ----------------------------------------------------------

    def _acquire_flock(self) -> None:
        fd = os.open(os.path.join(self.path, ".lock"), os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            os.close(fd)
            raise StoreLocked(
                f"store at {self.path} is locked by another writer "
                "(is the server running?)") from None
        self._flock_fd = fd

    def close(self) -> None:
        if self._flock_fd is not None:
            fcntl.flock(self._flock_fd, fcntl.LOCK_UN)
            os.close(self._flock_fd)
            self._flock_fd = None

    def __enter__(self) -> "AdminStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- persistence --------------------------------------------------------

    def _file(self, collection: str) -> str:
        return os.path.join(self.path, f"{collection}.jsonl")

    def _read_lines(self, collection: str, tolerate_torn_tail: bool = False) -> list[dict]:
        path = self._file(collection)
        if not os.path.exists(path):
            return []
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
        docs: list[dict] = []
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                docs.append(json.loads(line))
            except json.JSONDecodeError:
                if tolerate_torn_tail and i == len(lines) - 1:
                    break  # torn final line from a crash mid-append
                raise MalformedDocument(f"{path}: corrupt record on line {i + 1}") from None
        return docs

    def _write_collection(self, collection: str, docs: list[dict]) -> None:
        path = self._file(collection)
        tmp = os.path.join(self.path, f".{collection}.jsonl.tmp")
        with open(tmp, "w", encoding="utf-8") as handle:
            for doc in docs:
                handle.write(json.dumps(doc, sort_keys=True))
                handle.write("\n")
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
        _fsync_dir(self.path)

    def _append_line(self, collection: str, doc: dict) -> None:
        with open(self._file(collection), "a", encoding="utf-8") as handle:
            handle.write(json.dumps(doc, sort_keys=True))
            handle.write("\n")
            handle.flush()
            os.fsync(handle.fileno())

    def _load(self) -> None:
        self._users = {
            doc["user_name"]: UserRecord.from_doc(doc)
            for doc in self._read_lines("users")
        }
        self._datasets = {
            doc["dataset_name"]: StorageLocator.parse(doc["locator"])
            for doc in self._read_lines("datasets")
        }
        self._metadata = {
            doc["dataset_name"]: metadata_from_tree(doc["metadata"])
            for doc in self._read_lines("metadata")
        }
        self._archives = [
            ArchiveEntry.from_doc(doc)
            for doc in self._read_lines("archives", tolerate_torn_tail=True)
        ]

    def _persist_users(self) -> None:
        self._write_collection("users", [u.to_doc() for u in self._users.values()])

    def _persist_datasets(self) -> None:
        self._write_collection(
            "datasets",
            [{"dataset_name": name, "locator": str(loc)} for name, loc in self._datasets.items()],
        )
        self._write_collection(
            "metadata",
            [
                {"dataset_name": name, "metadata": metadata_to_tree(md)}
                for name, md in self._metadata.items()
            ],
        )

    # -- datasets -----------------------------------------------------------

    def add_dataset(self, dataset_name: str, locator: StorageLocator,
                    metadata_document: str) -> DatasetRecord:
        metadata = parse_metadata(metadata_document)
        with self._lock:
            if dataset_name in self._datasets:
                raise DuplicateDataset(f"dataset {dataset_name!r} is already registered")
            self._datasets[dataset_name] = locator
            self._metadata[dataset_name] = metadata
            self._persist_datasets()
            return DatasetRecord(dataset_name, locator, metadata)

    def get_dataset(self, dataset_name: str) -> Optional[DatasetRecord]:
        with self._lock:
            locator = self._datasets.get(dataset_name)
            if locator is None:
                return None
            return DatasetRecord(dataset_name, locator, self._metadata[dataset_name])

    def get_metadata(self, dataset_name: str) -> Optional[DatasetMetadata]:
        with self._lock:
            return self._metadata.get(dataset_name)

    # -- users and ledgers ---------------------------------------------------

    def add_user_with_budget(self, user_name: str, dataset_name: str,
                             epsilon, delta) -> UserRecord:
        with self._lock:
            if dataset_name not in self._datasets:
                raise UnknownDataset(f"dataset {dataset_name!r} is not registered")
            record = self._users.get(user_name)
            if record is not None and dataset_name in record.datasets:
                raise DuplicateUserDataset(
                    f"user {user_name!r} already holds a budget for {dataset_name!r}")
            initial = PrivacyBudget.of(epsilon, delta)
            if initial.delta > 1:
                raise InvariantViolation("allocated delta must lie in [0, 1]")
            if record is None:
                record = UserRecord(user_name=user_name)
                self._users[user_name] = record
            record.datasets[dataset_name] = BudgetLedgerEntry(
                initial=initial,
                spent=PrivacyBudget.zero(),
            )
            self._persist_users()
            return record

    def drop_user(self, user_name: str) -> None:
        with self._lock:
            if user_name not in self._users:
                raise UnknownUserOrDataset(f"unknown user {user_name!r}")
            del self._users[user_name]
            self._persist_users()

    def get_user(self, user_name: str) -> Optional[UserRecord]:
        with self._lock:
            return self._users.get(user_name)

    def get_ledger(self, user_name: str, dataset_name: str) -> BudgetLedgerEntry:
        with self._lock:
            record = self._users.get(user_name)
            if record is None or dataset_name not in record.datasets:
                raise UnknownUserOrDataset(
                    f"no budget for user {user_name!r} on dataset {dataset_name!r}")
            return record.datasets[dataset_name]

    def update_ledger(self, user_name: str, dataset_name: str,
                      fn: Callable[[BudgetLedgerEntry], BudgetLedgerEntry]) -> BudgetLedgerEntry:
        """Atomic read-modify-write; the new entry is durable before return."""
        with self._lock:
            entry = self.get_ledger(user_name, dataset_name)
            updated = fn(entry)
            if updated is not entry:
                self._users[user_name].datasets[dataset_name] = updated
                self._persist_users()
            return updated

    def set_may_query(self, user_name: str, value: bool) -> None:
        # runtime flag only; not persisted (reloads as True by design)
        with self._lock:
            record = self._users.get(user_name)
            if record is not None:
                record.may_query = value

    # -- archives -------------------------------------------------------------

    def append_archive(self, entry: ArchiveEntry) -> str:
        with self._lock:
            if not entry.id:
                entry.id = uuid.uuid4().hex
            if not entry.timestamp:
                entry.timestamp = utc_now_iso()
            self._archives.append(entry)
            self._append_line("archives", entry.to_doc())
            return entry.id

    def get_previous_queries(self, user_name: str) -> list[ArchiveEntry]:
        """This user's archive entries only, in append (timestamp) order."""
        with self._lock:
            return [e for e in self._archives if e.user_name == user_name]

    def reconcile_archives(self) -> list[ArchiveEntry]:
        """Repair the spend-then-archive crash window at startup.

        A spend is durable before its archive entry; if the process died in
        between, the ledger leads the archive. The spend wins: the missing
        entry is reconstructed with a flag and the budget difference.
        """
        appended: list[ArchiveEntry] = []
        with self._lock:
            archived: dict[tuple[str, str], PrivacyBudget] = {}
            for entry in self._archives:
                key = (entry.user_name, entry.dataset_name)
                archived[key] = archived.get(key, PrivacyBudget.zero()) + entry.charged_cost
            for user in self._users.values():
                for dataset_name, ledger in user.datasets.items():
                    key = (user.user_name, dataset_name)
                    seen = archived.get(key, PrivacyBudget.zero())
                    gap_eps = ledger.spent.epsilon - seen.epsilon
                    gap_delta = ledger.spent.delta - seen.delta
                    if gap_eps > 0 or gap_delta > 0:
                        entry = ArchiveEntry(
                            user_name=user.user_name,
                            dataset_name=dataset_name,
                            query=None,
                            params=None,
                            charged_cost=PrivacyBudget(max(gap_eps, 0), max(gap_delta, 0)),
                            result=None,
                            flags=(RECONSTRUCTED_FLAG,),
                        )
                        self.append_archive(entry)
                        appended.append(entry)
        return appended

    # -- admin surface ---------------------------------------------------------

    def show_collection(self, name: str) -> list[dict]:
        with self._lock:
            if name == "users":
                return [u.to_doc() for u in self._users.values()]
            if name == "datasets":
                return [
                    {"dataset_name": n, "locator": str(loc)}
                    for n, loc in self._datasets.items()
                ]
            if name == "metadata":
                return [
                    {"dataset_name": n, "metadata": metadata_to_tree(md)}
                    for n, md in self._metadata.items()
                ]
            if name == "archives":
                return [e.to_doc() for e in self._archives]
        raise UnknownCollection(f"unknown collection {name!r}; expected one of {COLLECTIONS}")
