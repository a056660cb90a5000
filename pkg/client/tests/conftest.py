"""Live-server fixture for client tests.

The client package consumes the service purely over its external
interfaces, so the fixture provisions the store through the admin CLI and
runs the server as a subprocess; nothing imports server code.
"""

from __future__ import annotations

import os
import socket
import subprocess
import sys
import time
import urllib.request

import pytest

PENGUIN_DOC = """\
dataset_name: PENGUIN
max_contributions: 1
columns:
  - {name: island, kind: categorical, categories: [A, B]}
  - {name: bill_length, kind: real, lower: 30.0, upper: 65.0}
"""

PENGUIN_CSV = (
    "island,bill_length\r\n"
    "A,55.1\r\nB,46.1\r\nA,50.7\r\nA,35.7\r\nB,47.0\r\nB,51.5\r\n"
)

USERS = [
    ("Dr. Antartica", "10", "0.005"),
    ("DummyOnly", "5", "0.001"),
    ("Poor", "0.1", "0"),
]


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def _admin(store_path: str, *args: str) -> None:
    proc = subprocess.run(
        [sys.executable, "-m", "lomas.cli", "--store-path", store_path, "admin", *args],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0, proc.stderr


@pytest.fixture(scope="session")
def live_server(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("server")
    csv_path = tmp / "penguins.csv"
    csv_path.write_text(PENGUIN_CSV, encoding="utf-8")
    metadata_path = tmp / "penguin_metadata.yaml"
    metadata_path.write_text(PENGUIN_DOC, encoding="utf-8")
    store_path = str(tmp / "store")

    _admin(store_path, "add_dataset", "--dataset", "PENGUIN",
           "--locator", f"local_path:{csv_path}",
           "--metadata_path", str(metadata_path))
    for user, epsilon, delta in USERS:
        _admin(store_path, "add_user_with_budget", "--user", user,
               "--dataset", "PENGUIN", "--epsilon", epsilon, "--delta", delta)

    port = _free_port()
    env = dict(os.environ, LOMAS_STORE_PATH=store_path)
    proc = subprocess.Popen(
        [sys.executable, "-m", "lomas.cli", "serve",
         "--bind", f"127.0.0.1:{port}", "--min-latency-ms", "10"],
        env=env, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE,
    )
    base_url = f"http://127.0.0.1:{port}"
    deadline = time.monotonic() + 20
    while time.monotonic() < deadline:
        if proc.poll() is not None:
            raise RuntimeError(proc.stderr.read().decode(errors="replace"))
        try:
            urllib.request.urlopen(base_url + "/budget", timeout=0.5)
            break
        except urllib.error.HTTPError:
            break  # any HTTP answer means the server is up
        except OSError:
            time.sleep(0.05)
    else:
        raise RuntimeError("server did not come up")

    yield base_url

    proc.terminate()
    try:
        proc.wait(timeout=10)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait(timeout=10)
