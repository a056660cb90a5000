"""The notebook-facing client session.

A Client binds (url, user_name, dataset_name) once; every call carries the
user name as the identity header. All values it returns are produced
server-side: the client is pure transport and does no DP computation, so
anything you do with the results is safe post-processing.

    from lomas_client import Client, mean_of, query

    client = Client(url="http://localhost:8000",
                    user_name="Dr. Antartica", dataset_name="PENGUIN")
    client.get_remaining_budget()
    dummy_df = client.get_dummy_dataset(nb_rows=100, seed=42)
    client.estimate_cost(query(mean_of("bill_length")), epsilon=0.1, delta=1e-5)
    result = client.query(query(mean_of("bill_length")), epsilon=0.1, delta=1e-5)
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Union

import pandas as pd
import requests

from .errors import TransportFailure, error_from_response
from .queries import QueryAst

IDENTITY_HEADER = "X-Lomas-User"


@dataclass(frozen=True)
class Budget:
    epsilon: float
    delta: float

    @classmethod
    def from_wire(cls, node: dict) -> "Budget":
        return cls(epsilon=float(node["epsilon"]), delta=float(node["delta"]))


@dataclass(frozen=True)
class QueryResult:
    values: dict
    charged_cost: Budget
    remaining_budget: Budget


class Client:
    """One user's session against one dataset on a lomas server."""

    def __init__(self, url: str, user_name: str, dataset_name: str,
                 timeout: float = 60.0):
        if not url or not user_name or not dataset_name:
            raise ValueError("url, user_name, and dataset_name are all required")
        self.url = url.rstrip("/")
        self.user_name = user_name
        self.dataset_name = dataset_name
        self.timeout = timeout
        self._http = requests.Session()
        self._http.headers[IDENTITY_HEADER] = user_name

    # -- transport -----------------------------------------------------------

    def _request(self, method: str, path: str, **kwargs) -> requests.Response:
        try:
            response = self._http.request(method, self.url + path,
                                           timeout=self.timeout, **kwargs)
        except requests.RequestException as exc:
            raise TransportFailure("TransportError", str(exc), 0) from exc
        if response.status_code >= 400:
            try:
                body = response.json()
            except ValueError:
                body = {"code": "InternalError", "message": response.text[:500]}
            raise error_from_response(response.status_code, body)
        return response

    def _get_json(self, path: str, params: Optional[dict] = None) -> dict:
        return self._request("GET", path, params=params).json()

    def _post_json(self, path: str, payload: dict) -> dict:
        return self._request("POST", path, json=payload).json()

    # -- budgets ---------------------------------------------------------------

    def _budget(self) -> dict:
        return self._get_json("/budget", params={"dataset": self.dataset_name})

    def get_initial_budget(self) -> Budget:
        return Budget.from_wire(self._budget()["initial"])

    def get_total_spent_budget(self) -> Budget:
        return Budget.from_wire(self._budget()["spent"])

    def get_remaining_budget(self) -> Budget:
        return Budget.from_wire(self._budget()["remaining"])

    # -- metadata and dummy data -------------------------------------------------

    def get_metadata(self) -> dict:
        """The dataset's public metadata tree (names, kinds, bounds, categories)."""
        return self._get_json("/metadata", params={"dataset": self.dataset_name})

    def get_dummy_dataset(self, nb_rows: int = 100, seed: int = 42) -> pd.DataFrame:
        """A seeded synthetic dataset as a DataFrame; free to fetch, free to query."""
        response = self._request("GET", "/dummy_dataset", params={
            "dataset": self.dataset_name, "nb_rows": nb_rows, "seed": seed,
        })
        return pd.read_csv(io.StringIO(response.text))

    # -- queries ---------------------------------------------------------------

    def query(self, query: Union[QueryAst, dict], epsilon: float, delta: float = 0.0,
              dummy: bool = False, seed: Optional[int] = None,
              nb_rows: Optional[int] = None) -> QueryResult:
        """Execute a query; dummy executions never touch the budget."""
        payload = {
            "dataset_name": self.dataset_name,
            "query": query.to_wire() if isinstance(query, QueryAst) else query,
            "params": {"epsilon": epsilon, "delta": delta},
            "dummy": dummy,
        }
        if seed is not None:
            payload["seed"] = seed
        if nb_rows is not None:
            payload["nb_rows"] = nb_rows
        body = self._post_json("/query", payload)
        return QueryResult(
            values=body["values"],
            charged_cost=Budget.from_wire(body["charged_cost"]),
            remaining_budget=Budget.from_wire(body["remaining_budget"]),
        )

    def estimate_cost(self, query: Union[QueryAst, dict], epsilon: float,
                      delta: float = 0.0) -> Budget:
        """Exact budget expenditure the query would charge; never spends."""
        body = self._post_json("/estimate_cost", {
            "dataset_name": self.dataset_name,
            "query": query.to_wire() if isinstance(query, QueryAst) else query,
            "params": {"epsilon": epsilon, "delta": delta},
        })
        return Budget.from_wire(body)

    def get_previous_queries(self) -> list[dict]:
        """This user's archived budget-consuming queries, oldest first."""
        return self._get_json("/previous_queries")["queries"]

    def __repr__(self) -> str:
        return (f"Client(url={self.url!r}, user_name={self.user_name!r}, "
                f"dataset_name={self.dataset_name!r})")
