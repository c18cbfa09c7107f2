"""Remote broker/store adapters speaking the framed-JSON protocol.

RemoteBroker and RemoteDataStore mirror the in-process Broker/DataStore
method surfaces, so workers and handlers run unchanged against either. One
WireClient (one socket) can back both when a single coordinator serves the
two roles.
"""

from __future__ import annotations

import base64
import socket
import threading
import time

from .broker import Lease
from .errors import ConnectionLost, WaitTimeout, error_for_code
from .jobmodel import TaskEnvelope, envelope_from_dict, envelope_to_dict
from .wire import LineStream

DEFAULT_POLL_MS = 100.0


class WireClient:
    """One request/response connection; thread-safe via a per-call lock."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.host = host
        self.port = port
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionLost(f"{host}:{port}: {exc}") from exc
        sock.settimeout(None)
        self._stream = LineStream(sock)
        self._lock = threading.Lock()

    def request(self, payload: dict) -> object:
        with self._lock:
            self._stream.send(payload)
            response = self._stream.recv()
        if response is None:
            raise ConnectionLost("server closed the connection")
        if not isinstance(response, dict):
            raise ConnectionLost(f"bad response frame: {response!r}")
        if "err" in response:
            raise error_for_code(response["err"], response.get("detail", ""))
        return response.get("ok")

    def close(self) -> None:
        self._stream.close()


def connect(endpoint: str, timeout: float = 30.0) -> WireClient:
    """Open a client for an 'host:port' endpoint string."""
    host, _, port = endpoint.rpartition(":")
    return WireClient(host or "127.0.0.1", int(port), timeout=timeout)


class RemoteBroker:
    def __init__(self, client: WireClient):
        self._client = client

    def create_queue(self, name: str) -> None:
        self._client.request({"op": "create_queue", "queue": name})

    def ensure_queue(self, name: str) -> None:
        from .errors import QueueExists

        try:
            self.create_queue(name)
        except QueueExists:
            pass

    def publish(self, queue: str, task: TaskEnvelope) -> None:
        self._client.request(
            {"op": "publish", "queue": queue, "task": envelope_to_dict(task)}
        )

    def fetch(self, queue: str, worker_id: str) -> Lease | None:
        got = self._client.request(
            {"op": "fetch", "queue": queue, "worker_id": worker_id}
        )
        if got is None:
            return None
        return Lease(
            lease_id=got["lease_id"],
            task=envelope_from_dict(got["task"]),
            worker_id=got["worker_id"],
            issued_at=got["issued_at"],
            deadline=got["deadline"],
        )

    def ack(self, lease_id: str) -> None:
        self._client.request({"op": "ack", "lease_id": lease_id})

    def depth(self, queue: str) -> tuple[int, int]:
        got = self._client.request({"op": "depth", "queue": queue})
        return got["pending"], got["leased"]


class RemoteDataStore:
    def __init__(self, client: WireClient, poll_ms: float = DEFAULT_POLL_MS):
        self._client = client
        self._poll_ms = poll_ms

    def put_plain(self, key: str, payload: bytes) -> None:
        self._client.request(
            {"op": "put_plain", "key": key, "payload_b64": _b64(payload)}
        )

    def get_plain(self, key: str) -> bytes:
        got = self._client.request({"op": "get_plain", "key": key})
        return base64.b64decode(got["payload_b64"])

    def put_versioned(self, key: str, version: int, payload: bytes) -> None:
        self._client.request(
            {
                "op": "put_versioned",
                "key": key,
                "version": version,
                "payload_b64": _b64(payload),
            }
        )

    def get_versioned(self, key: str) -> tuple[int, bytes]:
        got = self._client.request({"op": "get_versioned", "key": key})
        return got["version"], base64.b64decode(got["payload_b64"])

    def wait_for_version(self, key: str, min_version: int, timeout_ms: float) -> tuple[int, bytes]:
        """Poll the server in short bounded waits until the overall deadline.

        Keeps the wire strictly request/response while the server parks each
        bounded wait on its local condition variable.
        """
        deadline = time.monotonic() + timeout_ms / 1000.0
        while True:
            remaining_ms = (deadline - time.monotonic()) * 1000.0
            if remaining_ms <= 0:
                raise WaitTimeout(f"{key}: version {min_version} not reached")
            try:
                got = self._client.request(
                    {
                        "op": "wait_for_version",
                        "key": key,
                        "min_version": min_version,
                        "timeout_ms": min(self._poll_ms, remaining_ms),
                    }
                )
            except WaitTimeout:
                continue
            return got["version"], base64.b64decode(got["payload_b64"])


def _b64(payload: bytes) -> str:
    return base64.b64encode(payload).decode("ascii")
