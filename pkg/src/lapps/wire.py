"""Client/server message grammar and response framing.

Requests::

    GETPASS <8-digit pin> <userId> <regId> <latitude> <longitude>

Responses::

    SUCCESS: <atm_id> <password>
    FAIL: <message>

Frames are ``\\n``-terminated UTF-8 lines. In QR mode a response is sent as
``QR <n>\\n`` followed by ``n`` bytes of PNG holding the response line.
"""

from __future__ import annotations

import enum
import io
import math
import re
from dataclasses import dataclass
from typing import BinaryIO

from .geo import GeoError, GeoPoint
from .otpcore import is_pin
from .qr import matrix_to_png, png_to_matrix, qr_decode, qr_encode

ACK_LINE = "LAPPS READY"
ACK_FRAME = (ACK_LINE + "\n").encode("utf-8")
MAX_LINE_BYTES = 64 * 1024
MAX_QR_BYTES = 1024 * 1024

_DECIMAL_RE = re.compile(r"^[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?$")


class ParseError(ValueError):
    pass


class UnknownRequest(ParseError):
    pass


class MalformedRequest(ParseError):
    pass


class FrameError(ValueError):
    pass


class ResponseMode(enum.Enum):
    TEXT = "text"
    QR = "qr"


@dataclass(frozen=True)
class GetPassRequest:
    pin: str
    user_id: str
    reg_id: str
    lat_deg: float
    lon_deg: float

    @property
    def position(self) -> GeoPoint:
        return GeoPoint(self.lat_deg, self.lon_deg)

    def to_line(self) -> str:
        return f"GETPASS {self.pin} {self.user_id} {self.reg_id} {self.lat_deg!r} {self.lon_deg!r}"


def sanitize_message(message: str) -> str:
    text = " ".join(message.split())
    return text or "error"


@dataclass(frozen=True)
class Response:
    ok: bool
    atm_id: str = ""
    password: str = ""
    message: str = ""

    @classmethod
    def success(cls, atm_id: str, password: str) -> "Response":
        for name, token in (("atm_id", atm_id), ("password", password)):
            if not token or any(c.isspace() for c in token):
                raise ValueError(f"{name} must be a non-empty token without whitespace")
        return cls(True, atm_id=atm_id, password=password)

    @classmethod
    def fail(cls, message: str) -> "Response":
        return cls(False, message=sanitize_message(message))

    def __repr__(self) -> str:
        if self.ok:
            return f"Response(SUCCESS, atm_id={self.atm_id!r}, password=<hidden>)"
        return f"Response(FAIL, message={self.message!r})"


def _coordinate(token: str, name: str) -> float:
    if not _DECIMAL_RE.match(token):
        raise MalformedRequest(f"bad {name} {token!r}")
    value = float(token)
    if not math.isfinite(value):
        raise MalformedRequest(f"bad {name} {token!r}")
    return value


def parse_request(line: str) -> GetPassRequest:
    tokens = line.rstrip("\r\n").split()
    if not tokens:
        raise MalformedRequest("empty request")
    verb = tokens[0]
    if verb != "GETPASS":
        raise UnknownRequest(f"unknown request {verb[:32]!r}")
    if len(tokens) != 6:
        raise MalformedRequest(f"GETPASS takes 5 arguments, got {len(tokens) - 1}")
    _, pin, user_id, reg_id, lat, lon = tokens
    if not is_pin(pin):
        raise MalformedRequest("pin must be 8 decimal digits")
    req = GetPassRequest(pin, user_id, reg_id, _coordinate(lat, "latitude"), _coordinate(lon, "longitude"))
    try:
        req.position
    except GeoError as exc:
        raise MalformedRequest(str(exc)) from None
    return req


def serialize_response(r: Response) -> str:
    if r.ok:
        return f"SUCCESS: {r.atm_id} {r.password}\n"
    return f"FAIL: {sanitize_message(r.message)}\n"


def parse_response(line: str) -> Response:
    line = line.rstrip("\r\n")
    if line.startswith("SUCCESS: "):
        parts = line[len("SUCCESS: "):].split(" ")
        try:
            return Response.success(*parts)
        except (TypeError, ValueError):
            raise ParseError(f"malformed SUCCESS line {line[:64]!r}") from None
    if line.startswith("FAIL: ") and line[len("FAIL: "):].strip():
        return Response.fail(line[len("FAIL: "):])
    raise ParseError(f"unrecognised response {line[:64]!r}")


def qr_payload(r: Response) -> bytes:
    """PNG bytes of the QR symbol carrying the response line (without its newline)."""
    return matrix_to_png(qr_encode(serialize_response(r).rstrip("\n")))


def frame_response(r: Response, mode: ResponseMode = ResponseMode.TEXT) -> bytes:
    if mode is ResponseMode.TEXT:
        return serialize_response(r).encode("utf-8")
    png = qr_payload(r)
    return f"QR {len(png)}\n".encode("ascii") + png


def read_response(stream: BinaryIO) -> tuple[Response, str]:
    """Read one framed response; returns it with the decoded text line."""
    header = stream.readline(MAX_LINE_BYTES + 1)
    if not header:
        raise FrameError("connection closed before response")
    if not header.endswith(b"\n"):
        raise FrameError("response line too long or truncated")
    text = header.decode("utf-8", errors="replace")
    if text.startswith("QR "):
        try:
            n = int(text[3:].strip())
        except ValueError:
            raise FrameError(f"bad QR header {text!r}") from None
        if not 0 < n <= MAX_QR_BYTES:
            raise FrameError(f"QR frame length {n} out of range")
        png = _read_exact(stream, n)
        text = qr_decode(png_to_matrix(png))
    line = text.rstrip("\r\n")
    return parse_response(line), line


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    while n:
        chunk = stream.read(n)
        if not chunk:
            raise FrameError("connection closed inside QR frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def unframe(data: bytes) -> Response:
    buf = io.BytesIO(data)
    response, _ = read_response(buf)
    if buf.read():
        raise FrameError("trailing bytes after frame")
    return response
