"""Shared fixtures: the penguin fixture universe and server helpers."""

from __future__ import annotations

import http.server
import os
import signal
import socket
import socketserver
import subprocess
import sys
import threading
import time

import httpx
import pytest

from lomas.admin_store import AdminStore
from lomas.dataset import Dataset
from lomas.dataset_store import StorageLocator
from lomas.metadata import parse_metadata

PENGUIN_DOC = """\
dataset_name: PENGUIN
max_contributions: 1
columns:
  - {name: island, kind: categorical, categories: [A, B]}
  - {name: bill_length, kind: real, lower: 30.0, upper: 65.0}
"""

PENGUIN_ROWS = [
    ("A", 55.1),
    ("B", 46.1),
    ("A", 50.7),
    ("A", 35.7),
    ("B", 47.0),
    ("B", 51.5),
]

PENGUIN_CSV = "island,bill_length\r\n" + "\r\n".join(f"{i},{v}" for i, v in PENGUIN_ROWS) + "\r\n"


@pytest.fixture
def penguin_metadata():
    return parse_metadata(PENGUIN_DOC)


@pytest.fixture
def penguin_rows():
    return Dataset(columns=("island", "bill_length"), rows=list(PENGUIN_ROWS))


@pytest.fixture
def penguin_csv_path(tmp_path):
    path = tmp_path / "penguins.csv"
    path.write_text(PENGUIN_CSV, encoding="utf-8")
    return str(path)


def provision_store(store_path: str, csv_path: str, *,
                    user: str = "Dr. Antartica",
                    epsilon: float = 10.0, delta: float = 0.005) -> None:
    """Register PENGUIN from a local CSV and allocate one user budget."""
    with AdminStore(store_path) as store:
        store.add_dataset("PENGUIN", StorageLocator("local_path", csv_path), PENGUIN_DOC)
        store.add_user_with_budget(user, "PENGUIN", epsilon, delta)


@pytest.fixture
def provisioned_store_path(tmp_path, penguin_csv_path):
    store_path = str(tmp_path / "store")
    provision_store(store_path, penguin_csv_path)
    return store_path


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class ServerProcess:
    """A real gatekeeper server in a subprocess, for kill/restart tests."""

    def __init__(self, store_path: str, *, min_latency_ms: float = 10.0):
        self.store_path = store_path
        self.min_latency_ms = min_latency_ms
        self.port = free_port()
        self.base_url = f"http://127.0.0.1:{self.port}"
        self.proc: subprocess.Popen | None = None

    def start(self) -> "ServerProcess":
        env = dict(os.environ)
        env["LOMAS_STORE_PATH"] = self.store_path
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "lomas.cli", "serve",
             "--bind", f"127.0.0.1:{self.port}",
             "--min-latency-ms", str(self.min_latency_ms)],
            env=env,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.PIPE,
        )
        deadline = time.monotonic() + 20.0
        while time.monotonic() < deadline:
            if self.proc.poll() is not None:
                stderr = self.proc.stderr.read().decode(errors="replace")
                raise RuntimeError(f"server exited early:\n{stderr}")
            try:
                httpx.get(self.base_url + "/budget", timeout=0.5)
                return self
            except httpx.TransportError:
                time.sleep(0.05)
        raise RuntimeError("server did not come up in time")

    def kill(self) -> None:
        if self.proc and self.proc.poll() is None:
            self.proc.send_signal(signal.SIGKILL)
            self.proc.wait(timeout=10)

    def stop(self) -> None:
        if self.proc and self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait(timeout=10)


@pytest.fixture
def server_factory():
    servers: list[ServerProcess] = []

    def launch(store_path: str, **kwargs) -> ServerProcess:
        server = ServerProcess(store_path, **kwargs)
        servers.append(server)
        return server.start()

    yield launch
    for server in servers:
        server.stop()


class FileHttpServer:
    """Tiny HTTP server for dataset-store tests; optional per-path delays."""

    def __init__(self):
        self.responses: dict[str, bytes] = {}
        self.delays: dict[str, float] = {}
        self.hits: dict[str, int] = {}
        outer = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_GET(self):
                outer.hits[self.path] = outer.hits.get(self.path, 0) + 1
                delay = outer.delays.get(self.path)
                if delay:
                    time.sleep(delay)
                body = outer.responses.get(self.path)
                if body is None:
                    self.send_response(404)
                    self.end_headers()
                    return
                self.send_response(200)
                self.send_header("Content-Type", "text/csv")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self._server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def url(self, path: str) -> str:
        return f"http://127.0.0.1:{self.port}{path}"

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def file_http_server():
    server = FileHttpServer()
    yield server
    server.close()
