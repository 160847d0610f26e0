"""Message transports: an in-process loopback pair and TCP sockets.

Both move encoded frames, so every deployment exercises the same codec.
"""
from __future__ import annotations

import queue
import socket

from .protocol import HEADER, ProtocolError, decode_header, decode_payload, encode

__all__ = ["Connection", "LoopbackConnection", "loopback_pair", "SocketConnection",
           "connect", "ConnectionClosed"]


class ConnectionClosed(ConnectionError):
    pass


class Connection:
    bytes_sent = 0
    messages_sent = 0

    def send(self, msg) -> None:
        frame = encode(msg)
        self.bytes_sent += len(frame)
        self.messages_sent += 1
        self._send_frame(frame)

    def recv(self):
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _send_frame(self, frame: bytes) -> None:
        raise NotImplementedError


_EOF = object()


class LoopbackConnection(Connection):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout=None):
        self.inbox, self.outbox, self.timeout = inbox, outbox, timeout
        self.closed = False

    def _send_frame(self, frame):
        if self.closed:
            raise ConnectionClosed("send on closed connection")
        self.outbox.put(frame)

    def recv(self):
        try:
            frame = self.inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise ConnectionClosed("timed out waiting for a message") from None
        if frame is _EOF:
            self.closed = True
            raise ConnectionClosed("peer closed the connection")
        tag, length = decode_header(frame[:HEADER.size])
        if len(frame) != HEADER.size + length:
            raise ProtocolError("frame length mismatch")
        return decode_payload(tag, frame[HEADER.size:])

    def close(self):
        if not self.closed:
            self.closed = True
            self.outbox.put(_EOF)


def loopback_pair(timeout=None) -> tuple:
    a, b = queue.Queue(), queue.Queue()
    return LoopbackConnection(a, b, timeout), LoopbackConnection(b, a, timeout)


class SocketConnection(Connection):
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.reader = sock.makefile("rb")

    def _send_frame(self, frame):
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise ConnectionClosed(str(exc)) from None

    def _read(self, n: int) -> bytes:
        data = self.reader.read(n)
        if data is None or len(data) < n:
            raise ConnectionClosed("peer closed the connection")
        return data

    def recv(self):
        tag, length = decode_header(self._read(HEADER.size))
        return decode_payload(tag, self._read(length) if length else b"")

    def close(self):
        try:
            self.reader.close()
            self.sock.close()
        except OSError:
            pass


def connect(address: str, timeout: float = 30.0) -> SocketConnection:
    host, _, port = address.rpartition(":")
    sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
    sock.settimeout(None)
    return SocketConnection(sock)
