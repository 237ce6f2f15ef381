"""Connectors binding a :class:`Channel` to the simulator or to TCP."""

from __future__ import annotations

import socket
import threading

from ..remote import SimEndpoint
from .protocols import get_protocol
from .stream import Channel


def sim_connector(endpoint: SimEndpoint):
    def connect(on_lines, on_close):
        return endpoint.connect(on_lines, on_close)

    return connect


class SocketConnection:
    """Line-oriented TCP connection with a reader thread."""

    def __init__(self, sock: socket.socket, on_lines, on_close):
        self.sock = sock
        self.on_lines = on_lines
        self.on_close = on_close
        self._closed = False
        self._wlock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def send_lines(self, lines):
        data = ("\n".join(lines) + "\n").encode("utf-8")
        with self._wlock:
            if self._closed:
                raise ConnectionError("connection closed")
            self.sock.sendall(data)

    def _read_loop(self):
        buf = b""
        reason = "eof"
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                *complete, buf = buf.split(b"\n")
                if complete:
                    self.on_lines([c.decode("utf-8").rstrip("\r") for c in complete])
        except OSError as exc:
            reason = str(exc)
        if not self._closed:
            self._closed = True
            self.on_close(reason)

    def close(self):
        with self._wlock:
            if self._closed:
                return
            self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def socket_connector(host: str, port: int, timeout: float = 5.0):
    def connect(on_lines, on_close):
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return SocketConnection(sock, on_lines, on_close)

    return connect


def channel_open(endpoint, protocol_id: str = "smp", pipeline_capacity: int = 1, **kwargs) -> Channel:
    """Open a lazily connected channel.

    ``endpoint`` is a :class:`SimEndpoint`, a ``(host, port)`` pair, or a
    connector callable.
    """
    protocol = get_protocol(protocol_id)
    if pipeline_capacity < 1:
        raise ValueError("pipeline capacity must be >= 1")
    if isinstance(endpoint, SimEndpoint):
        kwargs.setdefault("clock", endpoint.clock)
        connect = sim_connector(endpoint)
    elif isinstance(endpoint, tuple):
        connect = socket_connector(*endpoint)
    elif callable(endpoint):
        connect = endpoint
    else:
        raise TypeError(f"unsupported endpoint {endpoint!r}")
    return Channel(connect, capacity=pipeline_capacity, protocol=protocol, **kwargs)
