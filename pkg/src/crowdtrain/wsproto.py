"""Minimal RFC 6455 WebSocket layer: server-side accept plus a small client.

Only what the framed-JSON protocol needs: text messages, fragmentation,
ping/pong, close. Client-to-server frames must be masked per the RFC;
server-to-client frames are sent unmasked.
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct

from .errors import ConnectionLost

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc
        if not chunk:
            raise ConnectionLost("socket closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def _read_http_head(sock: socket.socket) -> bytes:
    data = bytearray()
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionLost("peer closed during handshake")
        data.extend(chunk)
        if len(data) > 65536:
            raise ConnectionLost("oversized handshake")
    return bytes(data)


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def server_handshake(sock: socket.socket) -> None:
    """Upgrade an accepted TCP connection to a WebSocket, or raise."""
    head = _read_http_head(sock).decode("latin-1")
    lines = head.split("\r\n")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            headers[name.strip().lower()] = value.strip()
    if headers.get("upgrade", "").lower() != "websocket" or "sec-websocket-key" not in headers:
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        raise ConnectionLost("not a websocket upgrade")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(headers['sec-websocket-key'])}\r\n"
        "\r\n"
    )
    sock.sendall(response.encode("ascii"))


def client_handshake(sock: socket.socket, host: str, port: int, path: str = "/") -> None:
    key = base64.b64encode(os.urandom(16)).decode("ascii")
    request = (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n"
        "\r\n"
    )
    sock.sendall(request.encode("ascii"))
    head = _read_http_head(sock).decode("latin-1")
    if " 101 " not in head.split("\r\n")[0]:
        raise ConnectionLost(f"handshake rejected: {head.splitlines()[0]}")
    expected = accept_key(key)
    for line in head.split("\r\n"):
        if line.lower().startswith("sec-websocket-accept:"):
            if line.split(":", 1)[1].strip() != expected:
                raise ConnectionLost("bad Sec-WebSocket-Accept")
            return
    raise ConnectionLost("missing Sec-WebSocket-Accept")


def _read_frame(sock: socket.socket) -> tuple[int, bool, bytes]:
    b0, b1 = _read_exact(sock, 2)
    fin = bool(b0 & 0x80)
    opcode = b0 & 0x0F
    masked = bool(b1 & 0x80)
    length = b1 & 0x7F
    if length == 126:
        (length,) = struct.unpack(">H", _read_exact(sock, 2))
    elif length == 127:
        (length,) = struct.unpack(">Q", _read_exact(sock, 8))
    if length > 64 * 1024 * 1024:
        raise ConnectionLost("frame too large")
    mask = _read_exact(sock, 4) if masked else None
    payload = _read_exact(sock, length) if length else b""
    if mask:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, fin, payload


def _send_frame(sock: socket.socket, opcode: int, payload: bytes, mask: bool) -> None:
    header = bytearray([0x80 | opcode])
    length = len(payload)
    mask_bit = 0x80 if mask else 0x00
    if length < 126:
        header.append(mask_bit | length)
    elif length < 65536:
        header.append(mask_bit | 126)
        header.extend(struct.pack(">H", length))
    else:
        header.append(mask_bit | 127)
        header.extend(struct.pack(">Q", length))
    if mask:
        key = os.urandom(4)
        header.extend(key)
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    try:
        sock.sendall(bytes(header) + payload)
    except OSError as exc:
        raise ConnectionLost(str(exc)) from exc


class WebSocketConn:
    """One upgraded connection; text in, text out, control frames handled."""

    def __init__(self, sock: socket.socket, is_server: bool):
        self._sock = sock
        self._mask_outgoing = not is_server

    def send_text(self, text: str) -> None:
        _send_frame(self._sock, OP_TEXT, text.encode("utf-8"), self._mask_outgoing)

    def recv_text(self) -> str | None:
        """Next full text message, or None once the peer closes."""
        fragments: list[bytes] = []
        while True:
            opcode, fin, payload = _read_frame(self._sock)
            if opcode == OP_PING:
                _send_frame(self._sock, OP_PONG, payload, self._mask_outgoing)
                continue
            if opcode == OP_PONG:
                continue
            if opcode == OP_CLOSE:
                try:
                    _send_frame(self._sock, OP_CLOSE, payload[:2], self._mask_outgoing)
                except ConnectionLost:
                    pass
                return None
            if opcode == OP_TEXT or (opcode == OP_CONT and fragments):
                fragments.append(payload)
                if fin:
                    return b"".join(fragments).decode("utf-8")
                continue
            raise ConnectionLost(f"unsupported frame opcode {opcode}")

    def close(self, code: int = 1000) -> None:
        try:
            _send_frame(self._sock, OP_CLOSE, struct.pack(">H", code), self._mask_outgoing)
        except ConnectionLost:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


def connect(host: str, port: int, timeout: float = 10.0) -> WebSocketConn:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(timeout)
    client_handshake(sock, host, port)
    sock.settimeout(None)
    return WebSocketConn(sock, is_server=False)
