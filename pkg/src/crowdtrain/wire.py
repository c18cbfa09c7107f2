"""Newline-delimited JSON framing shared by the TCP and WebSocket transports.

One request object per line, one response object per request, in order.
Responses are either {"ok": ...} or {"err": "<ErrorCode>", "detail": ...}.
"""

from __future__ import annotations

import json
import socket

from .errors import ConnectionLost

MAX_FRAME_BYTES = 64 * 1024 * 1024


def dump_frame(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode("utf-8") + b"\n"


def parse_frame(line: bytes | str) -> object:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    return json.loads(line)


class LineStream:
    """Buffered line reader/writer over a TCP socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = bytearray()

    def send(self, obj: dict) -> None:
        try:
            self._sock.sendall(dump_frame(obj))
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc

    def recv(self) -> object | None:
        """Next frame, or None on orderly EOF at a frame boundary."""
        while True:
            newline = self._buf.find(b"\n")
            if newline >= 0:
                line = bytes(self._buf[:newline])
                del self._buf[: newline + 1]
                return parse_frame(line)
            if len(self._buf) > MAX_FRAME_BYTES:
                raise ConnectionLost("frame too large")
            try:
                chunk = self._sock.recv(65536)
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc
            if not chunk:
                if self._buf:
                    raise ConnectionLost("EOF mid-frame")
                return None
            self._buf.extend(chunk)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
