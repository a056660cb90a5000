"""The gatekeeper HTTP service.

Callers declare their identity in the X-Lomas-User header (no cryptographic
authentication in this version; the surface is shaped so real auth can
replace the header later). Budget-consuming queries run the eight-step
private pipeline under a per-user in-flight guard; dummy queries bypass the
guard and never touch budgets or archives. Private-path responses are padded
to a configurable minimum latency as a timing-side-channel mitigation.
"""

from __future__ import annotations

import contextlib
import logging
import os
import threading
import time
from dataclasses import dataclass

import asyncio

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse

from . import engine
from .admin_store import AdminStore, ArchiveEntry
from .budget import BudgetAccountant, PrivacyBudget
from .dataset_store import DatasetStore, DatasetStoreConfig
from .dummy import DEFAULT_DUMMY_ROWS, DEFAULT_DUMMY_SEED, generate_dummy
from .errors import (
    AccessDenied,
    DatasetUnavailable,
    InsufficientBudget,
    InvalidPrivacyParams,
    InvariantViolation,
    KindMismatch,
    LomasError,
    MalformedDocument,
    MissingField,
    NotFound,
    NullableUnsupported,
    ParseError,
    QueryInProgress,
    SchemaMismatch,
    TransportError,
    UnknownCategory,
    UnknownColumn,
    UnknownDataset,
    UnknownUserOrDataset,
    ValidationFailed,
)
from .mechanisms import private_rng
from .metadata import metadata_to_tree

logger = logging.getLogger("lomas.service")

IDENTITY_HEADER = "X-Lomas-User"

_STATUS = {
    "AccessDenied": 403,
    "QueryInProgress": 409,
    "ValidationFailed": 422,
    "InsufficientBudget": 403,
    "DatasetUnavailable": 503,
    "UnknownDataset": 404,
    "UnknownUserOrDataset": 404,
    "UnknownCollection": 404,
    "InternalError": 500,
}

#: engine/catalog errors that surface as a single ValidationFailed code
_VALIDATION_ERRORS = (
    InvariantViolation,
    MalformedDocument,
    MissingField,
    UnknownColumn,
    KindMismatch,
    InvalidPrivacyParams,
    NullableUnsupported,
)

_FETCH_ERRORS = (NotFound, TransportError, ParseError, SchemaMismatch, UnknownCategory)


@dataclass
class ServiceSettings:
    store_path: str
    min_latency_seconds: float = 0.05
    dataset_cache_ttl_seconds: float = 300.0
    fetch_timeout_seconds: float = 30.0
    max_rows: int = 1_000_000
    max_bytes: int = 256 * 1024 * 1024

    @classmethod
    def from_env(cls, **overrides) -> "ServiceSettings":
        env = os.environ
        values = {
            "store_path": env.get("LOMAS_STORE_PATH", ""),
            "min_latency_seconds": float(env.get("LOMAS_MIN_LATENCY_MS", "50")) / 1000.0,
            "dataset_cache_ttl_seconds": float(env.get("LOMAS_DATASET_CACHE_TTL_SECONDS", "300")),
            "fetch_timeout_seconds": float(env.get("LOMAS_FETCH_TIMEOUT_SECONDS", "30")),
            "max_rows": int(env.get("LOMAS_MAX_ROWS", str(1_000_000))),
            "max_bytes": int(env.get("LOMAS_MAX_BYTES", str(256 * 1024 * 1024))),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        if not values["store_path"]:
            raise InvariantViolation("store path required (flag or LOMAS_STORE_PATH)")
        return cls(**values)


class InFlightGuard:
    """At most one budget-consuming query per user at any time."""

    def __init__(self, store: AdminStore):
        self._store = store
        self._mutex = threading.Lock()
        self._held: set[str] = set()

    def acquire(self, user_name: str) -> bool:
        with self._mutex:
            if user_name in self._held:
                return False
            self._held.add(user_name)
        self._store.set_may_query(user_name, False)
        return True

    def release(self, user_name: str) -> None:
        with self._mutex:
            self._held.discard(user_name)
        self._store.set_may_query(user_name, True)


@dataclass
class QueryRequest:
    dataset_name: str
    query: dict
    params: engine.PrivacyParams
    dummy: bool
    seed: int | None
    nb_rows: int | None


def _decode_query_request(payload: dict) -> QueryRequest:
    if not isinstance(payload, dict):
        raise ValidationFailed("request body must be a JSON object")
    dataset_name = payload.get("dataset_name")
    if not dataset_name or not isinstance(dataset_name, str):
        raise ValidationFailed("dataset_name is required")
    query = payload.get("query")
    if not isinstance(query, dict):
        raise ValidationFailed("query is required and must be an object")
    params_node = payload.get("params")
    if not isinstance(params_node, dict) or "epsilon" not in params_node:
        raise ValidationFailed("params with epsilon (and optional delta) are required")
    epsilon = params_node.get("epsilon")
    delta = params_node.get("delta", 0)
    if not isinstance(epsilon, (int, float)) or isinstance(epsilon, bool):
        raise ValidationFailed("params.epsilon must be a number")
    if not isinstance(delta, (int, float)) or isinstance(delta, bool):
        raise ValidationFailed("params.delta must be a number")
    dummy = payload.get("dummy", False)
    if not isinstance(dummy, bool):
        raise ValidationFailed("dummy must be a boolean")
    seed = payload.get("seed")
    nb_rows = payload.get("nb_rows")
    if not dummy and (seed is not None or nb_rows is not None):
        raise ValidationFailed("seed and nb_rows are only valid for dummy queries")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ValidationFailed("seed must be an integer")
    if nb_rows is not None and (isinstance(nb_rows, bool) or not isinstance(nb_rows, int) or nb_rows < 1):
        raise ValidationFailed("nb_rows must be a positive integer")
    return QueryRequest(
        dataset_name=dataset_name,
        query=query,
        params=engine.PrivacyParams(epsilon=float(epsilon), delta=float(delta)),
        dummy=dummy,
        seed=seed,
        nb_rows=nb_rows,
    )


def _reraise_as_validation(exc: LomasError) -> None:
    raise ValidationFailed(f"{exc.code}: {exc.message}") from exc


def create_app(settings: ServiceSettings, store: AdminStore | None = None) -> FastAPI:
    """Build the service around an open (or to-be-opened) admin store.

    Startup reconciles the archive log against the ledgers so a crash
    between spend and archive leaves no unexplained budget.
    """
    if store is None:
        store = AdminStore(settings.store_path, writable=True)
    reconstructed = store.reconcile_archives()
    if reconstructed:
        logger.warning("reconciled %d archive entr%s from ledger state",
                       len(reconstructed), "y" if len(reconstructed) == 1 else "ies")

    accountant = BudgetAccountant(store)
    datasets = DatasetStore(DatasetStoreConfig(
        dataset_cache_ttl_seconds=settings.dataset_cache_ttl_seconds,
        fetch_timeout_seconds=settings.fetch_timeout_seconds,
        max_rows=settings.max_rows,
        max_bytes=settings.max_bytes,
    ))
    guard = InFlightGuard(store)

    @contextlib.asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        store.close()  # releases the exclusive store lock

    app = FastAPI(title="lomas gatekeeper", docs_url=None, redoc_url=None,
                  lifespan=lifespan)
    app.state.store = store
    app.state.accountant = accountant
    app.state.dataset_store = datasets
    app.state.guard = guard
    app.state.settings = settings

    # -- plumbing -----------------------------------------------------------

    @app.exception_handler(LomasError)
    async def lomas_error_handler(_request: Request, exc: LomasError):
        body = {"code": exc.code, "message": exc.message}
        if isinstance(exc, InsufficientBudget) and exc.remaining is not None:
            body["remaining"] = exc.remaining.to_json_dict()
        return JSONResponse(status_code=_STATUS.get(exc.code, 400), content=body)

    @app.exception_handler(RequestValidationError)
    async def request_decode_handler(_request: Request, exc: RequestValidationError):
        # undecodable bodies never reach the path split, so pad unconditionally
        await asyncio.sleep(settings.min_latency_seconds)
        return JSONResponse(status_code=422, content={
            "code": "ValidationFailed",
            "message": f"request body does not decode: {exc.errors()[:1]}",
        })

    @app.exception_handler(Exception)
    async def unexpected_error_handler(_request: Request, exc: Exception):
        logger.exception("unhandled error: %s", exc)
        return JSONResponse(status_code=500,
                            content={"code": "InternalError", "message": "internal error"})

    def identity(request: Request) -> str:
        user = request.headers.get(IDENTITY_HEADER)
        if not user:
            raise AccessDenied(f"missing {IDENTITY_HEADER} header")
        return user

    def resolve_access(user_name: str, dataset_name: str):
        record = store.get_dataset(dataset_name)
        if record is None:
            raise UnknownDataset(f"dataset {dataset_name!r} is not registered")
        user = store.get_user(user_name)
        if user is None or dataset_name not in user.datasets:
            raise AccessDenied(f"user {user_name!r} has no access to dataset {dataset_name!r}")
        return record

    def pad_latency(started: float) -> None:
        floor = settings.min_latency_seconds
        elapsed = time.monotonic() - started
        if elapsed < floor:
            time.sleep(floor - elapsed)

    # -- query pipeline -------------------------------------------------------

    def run_private_query(user_name: str, req: QueryRequest) -> dict:
        dataset = resolve_access(user_name, req.dataset_name)
        if not guard.acquire(user_name):
            raise QueryInProgress(f"user {user_name!r} already has a query in flight")
        try:
            try:
                ast = engine.query_from_wire(req.query)
                engine.validate_query(ast, dataset.metadata, req.params)
            except _VALIDATION_ERRORS as exc:
                _reraise_as_validation(exc)
            cost = engine.estimate_cost(ast, req.params)
            ledger = accountant.get_budget(user_name, req.dataset_name)
            if not ledger.remaining.covers(cost):
                raise InsufficientBudget("estimated cost exceeds the remaining budget",
                                         remaining=ledger.remaining)
            try:
                rows = datasets.fetch(dataset.locator, dataset.metadata)
                clamped = engine.clamp_dataset(rows, dataset.metadata)
            except _FETCH_ERRORS as exc:
                raise DatasetUnavailable(f"{exc.code}: {exc.message}") from exc
            result = engine.execute_dp(ast, clamped, dataset.metadata, req.params,
                                       private_rng())
            outcome = accountant.check_and_spend(user_name, req.dataset_name,
                                                 result.charged_cost)
            if not outcome.accepted:
                raise InsufficientBudget("budget changed during execution",
                                         remaining=outcome.remaining)
            wire_values = engine.result_values_to_wire(result.values,
                                                       grouped=ast.group_by is not None)
            store.append_archive(ArchiveEntry(
                user_name=user_name,
                dataset_name=req.dataset_name,
                query=engine.query_to_wire(ast),
                params={"epsilon": req.params.epsilon, "delta": req.params.delta},
                charged_cost=result.charged_cost,
                result=wire_values,
            ))
            return {
                "values": wire_values,
                "charged_cost": result.charged_cost.to_json_dict(),
                "remaining_budget": outcome.remaining.to_json_dict(),
            }
        finally:
            guard.release(user_name)

    def run_dummy_query(user_name: str, req: QueryRequest) -> dict:
        dataset = resolve_access(user_name, req.dataset_name)
        try:
            ast = engine.query_from_wire(req.query)
            engine.validate_query(ast, dataset.metadata, req.params,
                                  allow_large_epsilon=True)
        except _VALIDATION_ERRORS as exc:
            _reraise_as_validation(exc)
        seed = req.seed if req.seed is not None else DEFAULT_DUMMY_SEED
        nb_rows = req.nb_rows if req.nb_rows is not None else DEFAULT_DUMMY_ROWS
        if nb_rows > settings.max_rows:
            raise ValidationFailed(f"nb_rows exceeds the row cap of {settings.max_rows}")
        rows = generate_dummy(dataset.metadata, nb_rows, seed)
        result = engine.execute_dp(ast, rows, dataset.metadata, req.params,
                                   private_rng(), allow_large_epsilon=True)
        ledger = accountant.get_budget(user_name, req.dataset_name)
        return {
            "values": engine.result_values_to_wire(result.values,
                                                   grouped=ast.group_by is not None),
            "charged_cost": PrivacyBudget.zero().to_json_dict(),
            "remaining_budget": ledger.remaining.to_json_dict(),
        }

    # -- routes ----------------------------------------------------------------

    @app.post("/query")
    def query(request: Request, payload: dict = Body(...)):
        started = time.monotonic()
        dummy = isinstance(payload, dict) and payload.get("dummy") is True
        try:
            user_name = identity(request)
            req = _decode_query_request(payload)
            if req.dummy:
                return run_dummy_query(user_name, req)
            return run_private_query(user_name, req)
        finally:
            if not dummy:
                pad_latency(started)

    @app.post("/estimate_cost")
    def estimate_cost(request: Request, payload: dict = Body(...)):
        user_name = identity(request)
        if not isinstance(payload, dict):
            raise ValidationFailed("request body must be a JSON object")
        req = _decode_query_request({**payload, "dummy": False})
        dataset = resolve_access(user_name, req.dataset_name)
        try:
            ast = engine.query_from_wire(req.query)
            engine.validate_query(ast, dataset.metadata, req.params)
        except _VALIDATION_ERRORS as exc:
            _reraise_as_validation(exc)
        return engine.estimate_cost(ast, req.params).to_json_dict()

    @app.get("/budget")
    def budget(request: Request, dataset: str):
        user_name = identity(request)
        resolve_access(user_name, dataset)
        ledger = accountant.get_budget(user_name, dataset)
        return {
            "initial": ledger.initial.to_json_dict(),
            "spent": ledger.spent.to_json_dict(),
            "remaining": ledger.remaining.to_json_dict(),
        }

    @app.get("/metadata")
    def metadata(request: Request, dataset: str):
        user_name = identity(request)
        record = resolve_access(user_name, dataset)
        return metadata_to_tree(record.metadata)

    @app.get("/dummy_dataset")
    def dummy_dataset(request: Request, dataset: str,
                      nb_rows: int = DEFAULT_DUMMY_ROWS, seed: int = DEFAULT_DUMMY_SEED):
        user_name = identity(request)
        record = resolve_access(user_name, dataset)
        if nb_rows < 0:
            raise ValidationFailed("nb_rows must be non-negative")
        if nb_rows > settings.max_rows:
            raise ValidationFailed(f"nb_rows exceeds the row cap of {settings.max_rows}")
        rows = generate_dummy(record.metadata, nb_rows, seed)
        return PlainTextResponse(rows.to_csv(), media_type="text/csv")

    @app.get("/previous_queries")
    def previous_queries(request: Request):
        user_name = identity(request)
        if store.get_user(user_name) is None:
            raise AccessDenied(f"unknown user {user_name!r}")
        entries = store.get_previous_queries(user_name)
        return {"queries": [entry.to_wire() for entry in entries]}

    return app
