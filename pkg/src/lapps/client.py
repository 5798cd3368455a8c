"""Client side of the GETPASS protocol and the admin endpoint."""

from __future__ import annotations

import socket
import ssl

from .wire import ACK_FRAME, FrameError, GetPassRequest, Response, read_response


class TransportError(Exception):
    """Server unreachable, no acknowledgement, or the connection broke."""


def _connect(host: str, port: int, timeout: float, ssl_context: ssl.SSLContext | None) -> socket.socket:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
        if ssl_context is not None:
            sock = ssl_context.wrap_socket(sock, server_hostname=host)
        return sock
    except OSError as exc:
        raise TransportError(f"cannot connect to {host}:{port}: {exc}") from None


def _await_ack(rfile) -> None:
    try:
        ack = rfile.readline(len(ACK_FRAME) + 1)
    except OSError as exc:
        raise TransportError(f"no acknowledgement: {exc}") from None
    if ack != ACK_FRAME:
        raise TransportError(f"no acknowledgement (got {ack[:40]!r})")


def request_password(
    host: str,
    port: int,
    request: GetPassRequest,
    timeout: float = 5.0,
    ssl_context: ssl.SSLContext | None = None,
) -> tuple[Response, str]:
    """Connect, wait for the acknowledgement, send GETPASS, read the reply, close."""
    with _connect(host, port, timeout, ssl_context) as sock, sock.makefile("rb") as rfile:
        _await_ack(rfile)
        try:
            sock.sendall((request.to_line() + "\n").encode("utf-8"))
            return read_response(rfile)
        except (OSError, FrameError) as exc:
            raise TransportError(f"no response: {exc}") from None


def admin_command(host: str, port: int, line: str, timeout: float = 5.0) -> str:
    with _connect(host, port, timeout, None) as sock, sock.makefile("rb") as rfile:
        _await_ack(rfile)
        try:
            sock.sendall((line + "\n").encode("utf-8"))
            reply = rfile.readline(4096)
        except OSError as exc:
            raise TransportError(f"no reply: {exc}") from None
        if not reply.endswith(b"\n"):
            raise TransportError("admin connection closed")
        return reply.decode("utf-8").rstrip("\n")
