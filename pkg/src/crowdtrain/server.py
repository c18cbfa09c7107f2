"""The coordinator: broker and/or datastore served over TCP and WebSocket.

Both listeners speak the same framed-JSON request/response protocol; a
WebSocket text message carries exactly one frame. The process can host the
broker, the store, or both (the single-binary mode), and runs the lease
sweeper so visibility timeouts fire in wall-clock time.
"""

from __future__ import annotations

import base64
import binascii
import socket
import threading

from .broker import Broker, BrokerSweeper
from .datastore import DataStore
from .errors import BadRequest, ConnectionLost, CrowdtrainError
from .jobmodel import envelope_from_dict, envelope_to_dict
from .wire import LineStream, parse_frame
from . import wsproto

_WAIT_CAP_MS = 60_000.0


class Coordinator:
    """Threaded server; start() binds, stop() tears everything down."""

    def __init__(
        self,
        broker: Broker | None = None,
        store: DataStore | None = None,
        host: str = "127.0.0.1",
        tcp_port: int | None = 0,
        ws_port: int | None = None,
        sweep_interval_ms: float = 25.0,
    ):
        if broker is None and store is None:
            raise ValueError("coordinator needs a broker, a store, or both")
        self.broker = broker
        self.store = store
        self.host = host
        self._tcp_port = tcp_port
        self._ws_port = ws_port
        self._listeners: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        self._stopping = threading.Event()
        self._sweeper = (
            BrokerSweeper(broker, sweep_interval_ms) if broker is not None else None
        )
        self.tcp_address: tuple[str, int] | None = None
        self.ws_address: tuple[str, int] | None = None

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "Coordinator":
        if self._tcp_port is not None:
            self.tcp_address = self._listen(self._tcp_port, self._serve_tcp_conn)
        if self._ws_port is not None:
            self.ws_address = self._listen(self._ws_port, self._serve_ws_conn)
        if self._sweeper is not None:
            self._sweeper.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        for sock in self._listeners:
            _quiet_close(sock)
        with self._conns_lock:
            conns = list(self._conns)
        for sock in conns:
            _quiet_close(sock)
        if self._sweeper is not None:
            self._sweeper.stop()
        for thread in self._threads:
            thread.join(timeout=5)

    def __enter__(self) -> "Coordinator":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _listen(self, port: int, conn_handler) -> tuple[str, int]:
        listener = socket.create_server((self.host, port))
        self._listeners.append(listener)
        thread = threading.Thread(
            target=self._accept_loop, args=(listener, conn_handler), daemon=True
        )
        thread.start()
        self._threads.append(thread)
        return listener.getsockname()[:2]

    def _accept_loop(self, listener: socket.socket, conn_handler) -> None:
        while not self._stopping.is_set():
            try:
                sock, _ = listener.accept()
            except OSError:
                return
            with self._conns_lock:
                self._conns.add(sock)
            thread = threading.Thread(target=self._run_conn, args=(sock, conn_handler), daemon=True)
            thread.start()

    def _run_conn(self, sock: socket.socket, conn_handler) -> None:
        try:
            conn_handler(sock)
        except (ConnectionLost, OSError):
            pass
        finally:
            _quiet_close(sock)
            with self._conns_lock:
                self._conns.discard(sock)

    def _serve_tcp_conn(self, sock: socket.socket) -> None:
        stream = LineStream(sock)
        while True:
            try:
                request = stream.recv()
            except ValueError:
                stream.send({"err": BadRequest.code, "detail": "unparseable frame"})
                continue
            if request is None:
                return
            stream.send(self.dispatch(request))

    def _serve_ws_conn(self, sock: socket.socket) -> None:
        wsproto.server_handshake(sock)
        conn = wsproto.WebSocketConn(sock, is_server=True)
        while True:
            text = conn.recv_text()
            if text is None:
                return
            try:
                request = parse_frame(text)
            except ValueError:
                request = None
            if request is None:
                response = {"err": BadRequest.code, "detail": "unparseable frame"}
            else:
                response = self.dispatch(request)
            conn.send_text(wire_text(response))

    # -- request dispatch ------------------------------------------------------

    def dispatch(self, request: object) -> dict:
        if not isinstance(request, dict) or not isinstance(request.get("op"), str):
            return {"err": BadRequest.code, "detail": "request must be {'op': ...}"}
        op = request["op"]
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            return {"err": BadRequest.code, "detail": f"unknown op {op!r}"}
        try:
            return {"ok": handler(request)}
        except CrowdtrainError as exc:
            return {"err": exc.code, "detail": str(exc)}
        except (KeyError, TypeError, ValueError) as exc:
            return {"err": BadRequest.code, "detail": f"{type(exc).__name__}: {exc}"}

    def _need_broker(self) -> Broker:
        if self.broker is None:
            raise BadRequest("this coordinator does not serve queues")
        return self.broker

    def _need_store(self) -> DataStore:
        if self.store is None:
            raise BadRequest("this coordinator does not serve storage")
        return self.store

    def _op_create_queue(self, request: dict):
        self._need_broker().create_queue(_req_str(request, "queue"))
        return True

    def _op_publish(self, request: dict):
        task = envelope_from_dict(request["task"])
        self._need_broker().publish(_req_str(request, "queue"), task)
        return True

    def _op_fetch(self, request: dict):
        lease = self._need_broker().fetch(
            _req_str(request, "queue"), _req_str(request, "worker_id")
        )
        if lease is None:
            return None
        return {
            "lease_id": lease.lease_id,
            "task": envelope_to_dict(lease.task),
            "worker_id": lease.worker_id,
            "issued_at": lease.issued_at,
            "deadline": lease.deadline,
        }

    def _op_ack(self, request: dict):
        self._need_broker().ack(_req_str(request, "lease_id"))
        return True

    def _op_depth(self, request: dict):
        pending, leased = self._need_broker().depth(_req_str(request, "queue"))
        return {"pending": pending, "leased": leased}

    def _op_put_plain(self, request: dict):
        self._need_store().put_plain(_req_str(request, "key"), _req_b64(request, "payload_b64"))
        return True

    def _op_get_plain(self, request: dict):
        payload = self._need_store().get_plain(_req_str(request, "key"))
        return {"payload_b64": base64.b64encode(payload).decode("ascii")}

    def _op_put_versioned(self, request: dict):
        self._need_store().put_versioned(
            _req_str(request, "key"), int(request["version"]), _req_b64(request, "payload_b64")
        )
        return True

    def _op_get_versioned(self, request: dict):
        version, payload = self._need_store().get_versioned(_req_str(request, "key"))
        return {"version": version, "payload_b64": base64.b64encode(payload).decode("ascii")}

    def _op_wait_for_version(self, request: dict):
        timeout_ms = float(request["timeout_ms"])
        version, payload = self._need_store().wait_for_version(
            _req_str(request, "key"),
            int(request["min_version"]),
            min(timeout_ms, _WAIT_CAP_MS),
        )
        return {"version": version, "payload_b64": base64.b64encode(payload).decode("ascii")}


def wire_text(obj: dict) -> str:
    import json

    return json.dumps(obj, separators=(",", ":"))


def _req_str(request: dict, key: str) -> str:
    value = request[key]
    if not isinstance(value, str):
        raise BadRequest(f"{key} must be a string")
    return value


def _req_b64(request: dict, key: str) -> bytes:
    value = request[key]
    if not isinstance(value, str):
        raise BadRequest(f"{key} must be base64 text")
    try:
        return base64.b64decode(value, validate=True)
    except binascii.Error as exc:
        raise BadRequest(f"{key}: {exc}") from exc


def _quiet_close(sock: socket.socket) -> None:
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass
