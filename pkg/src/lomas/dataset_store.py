"""Read-only access to private datasets through pluggable storage adapters.

Datasets are fully materialized per fetch (no streaming) behind a TTL cache
that is single-flight per locator: concurrent misses for the same locator
trigger exactly one underlying fetch. Adapters exist for locally mounted
files and HTTP file servers; an S3 slot is reserved but not implemented.
"""

from __future__ import annotations

import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Optional
from urllib.parse import urlparse

from .dataset import Dataset
from .errors import InvariantViolation, NotFound, ParseError, TransportError
from .metadata import DatasetMetadata

LOCATOR_KINDS = ("local_path", "http_url")

_CHUNK = 64 * 1024


@dataclass(frozen=True)
class StorageLocator:
    """Where a dataset lives: an adapter kind plus an address."""

    kind: str
    address: str

    def __post_init__(self):
        if self.kind not in LOCATOR_KINDS:
            raise InvariantViolation(
                f"unknown locator kind {self.kind!r}; expected one of {LOCATOR_KINDS}")
        if not self.address or not isinstance(self.address, str):
            raise InvariantViolation("locator address must be a non-empty string")
        if self.kind == "http_url":
            parts = urlparse(self.address)
            if parts.scheme not in ("http", "https") or not parts.netloc:
                raise InvariantViolation(f"http_url address must be an absolute URL, got {self.address!r}")

    @classmethod
    def parse(cls, text: str) -> "StorageLocator":
        """Parse the CLI form '<kind>:<address>'."""
        if not isinstance(text, str) or ":" not in text:
            raise InvariantViolation(f"locator must look like '<kind>:<address>', got {text!r}")
        kind, address = text.split(":", 1)
        return cls(kind=kind, address=address)

    def __str__(self) -> str:
        return f"{self.kind}:{self.address}"


@dataclass
class DatasetStoreConfig:
    dataset_cache_ttl_seconds: float = 300.0
    fetch_timeout_seconds: float = 30.0
    max_rows: int = 1_000_000
    max_bytes: int = 256 * 1024 * 1024


def _read_local(address: str, config: DatasetStoreConfig) -> str:
    try:
        with open(address, "rb") as handle:
            payload = handle.read(config.max_bytes + 1)
    except FileNotFoundError:
        raise NotFound(f"no such file: {address}") from None
    except IsADirectoryError:
        raise NotFound(f"{address} is a directory") from None
    except OSError as exc:
        raise TransportError(f"cannot read {address}: {exc}") from None
    if len(payload) > config.max_bytes:
        raise TransportError(f"{address} exceeds the configured size cap of {config.max_bytes} bytes")
    try:
        return payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{address} is not UTF-8 text: {exc}") from None


def _read_http(address: str, config: DatasetStoreConfig) -> str:
    request = urllib.request.Request(address, headers={"User-Agent": "lomas-dataset-store"})
    try:
        response = urllib.request.urlopen(request, timeout=config.fetch_timeout_seconds)
    except urllib.error.HTTPError as exc:
        if exc.code == 404:
            raise NotFound(f"{address} returned 404") from None
        raise TransportError(f"{address} returned HTTP {exc.code}") from None
    except urllib.error.URLError as exc:
        raise TransportError(f"cannot reach {address}: {exc.reason}") from None
    except TimeoutError:
        raise TransportError(f"timed out fetching {address}") from None
    chunks = []
    total = 0
    with response:
        while True:
            try:
                chunk = response.read(_CHUNK)
            except (OSError, TimeoutError) as exc:
                raise TransportError(f"read error from {address}: {exc}") from None
            if not chunk:
                break
            total += len(chunk)
            if total > config.max_bytes:
                raise TransportError(
                    f"{address} exceeds the configured size cap of {config.max_bytes} bytes")
            chunks.append(chunk)
    try:
        return b"".join(chunks).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{address} is not UTF-8 text: {exc}") from None


_ADAPTERS = {
    "local_path": _read_local,
    "http_url": _read_http,
}


class _CacheSlot:
    __slots__ = ("lock", "dataset", "expires_at")

    def __init__(self):
        self.lock = threading.Lock()
        self.dataset: Optional[Dataset] = None
        self.expires_at = 0.0


class DatasetStore:
    """Fetches and parses private datasets, with per-locator caching."""

    def __init__(self, config: Optional[DatasetStoreConfig] = None):
        self.config = config or DatasetStoreConfig()
        self._mutex = threading.Lock()
        self._slots: dict[str, _CacheSlot] = {}

    def fetch_uncached(self, locator: StorageLocator, metadata: DatasetMetadata) -> Dataset:
        """One adapter read plus CSV parse; never writes to storage."""
        text = _ADAPTERS[locator.kind](locator.address, self.config)
        return Dataset.from_csv(text, metadata, max_rows=self.config.max_rows)

    def fetch(self, locator: StorageLocator, metadata: DatasetMetadata) -> Dataset:
        slot = self._slot(str(locator))
        with slot.lock:
            now = time.monotonic()
            if slot.dataset is not None and now < slot.expires_at:
                return slot.dataset
            dataset = self.fetch_uncached(locator, metadata)
            slot.dataset = dataset
            slot.expires_at = now + self.config.dataset_cache_ttl_seconds
            return dataset

    def invalidate(self, locator: Optional[StorageLocator] = None) -> None:
        with self._mutex:
            if locator is None:
                self._slots.clear()
            else:
                self._slots.pop(str(locator), None)

    def _slot(self, key: str) -> _CacheSlot:
        with self._mutex:
            slot = self._slots.get(key)
            if slot is None:
                slot = self._slots[key] = _CacheSlot()
            return slot
