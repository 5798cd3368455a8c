"""Pin generation/validation and single-use password generation.

Shared by the server, the pin-device CLI and the ATM emulator. Everything
here is pure or draws from a caller-supplied random source.
"""

from __future__ import annotations

import hashlib
import re
import string
from dataclasses import dataclass
from typing import Callable, Protocol

MINUTE_MS = 60_000
PIN_LENGTH = 8
DEFAULT_PASSWORD_LENGTH = 8
DEFAULT_ALPHABET = string.ascii_uppercase + string.ascii_lowercase + string.digits
DEFAULT_RETRY_LIMIT = 1000

_HEX_DIGEST_RE = re.compile(r"^[0-9a-f]{128}$")
_PIN_RE = re.compile(r"^[0-9]{8}$")

Pin = str


class GenerationExhausted(RuntimeError):
    """No unused password was found within the retry limit."""


class RandomSource(Protocol):
    def randrange(self, stop: int) -> int: ...


def sha512_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha512(data).hexdigest()


def is_hex_digest(value: str) -> bool:
    return bool(_HEX_DIGEST_RE.match(value))


def is_pin(value: str) -> bool:
    return bool(_PIN_RE.match(value))


def floor_to_minute(now_ms: int) -> int:
    """Round an epoch-millisecond instant down to its minute."""
    if now_ms < 0:
        raise ValueError(f"negative timestamp: {now_ms}")
    return now_ms - now_ms % MINUTE_MS


def _first_digits(chars: str, n: int = 4) -> str:
    found = [c for c in chars if "0" <= c <= "9"][:n]
    return "".join(found).ljust(n, "0")


def extract_pin_digits(hex_string: str) -> Pin:
    """First four decimal digits reading forward, then first four reading backward.

    A half with fewer than four digits is right-padded with ``0``.
    """
    if not hex_string:
        raise ValueError("empty hex string")
    return _first_digits(hex_string) + _first_digits(hex_string[::-1])


def generate_pin(fp_hash: str, user_id: str, stamp_ms: int) -> Pin:
    """Pin for ``user_id`` at a minute stamp, from the hex digest of the fixed password."""
    if not is_hex_digest(fp_hash):
        raise ValueError("fp_hash must be a 128-char lowercase hex SHA-512 digest")
    if not user_id:
        raise ValueError("user_id must be non-empty")
    if stamp_ms < 0 or stamp_ms % MINUTE_MS:
        raise ValueError(f"stamp must be a non-negative whole minute in ms: {stamp_ms}")
    return extract_pin_digits(sha512_hex(f"{fp_hash}{stamp_ms}{user_id}"))


def pin_for_now(fixed_password: str, user_id: str, now_ms: int) -> Pin:
    """What the pin device shows at ``now_ms``."""
    return generate_pin(sha512_hex(fixed_password), user_id, floor_to_minute(now_ms))


def validate_pin(received: str, fp_hash: str, user_id: str, now_ms: int) -> bool:
    """Accept a pin from the current minute or the one before it."""
    if not is_pin(received):
        return False
    stamp = floor_to_minute(now_ms)
    if received == generate_pin(fp_hash, user_id, stamp):
        return True
    return stamp >= MINUTE_MS and received == generate_pin(fp_hash, user_id, stamp - MINUTE_MS)


@dataclass(frozen=True)
class Password:
    plaintext: str
    digest: str

    @classmethod
    def from_plaintext(cls, plaintext: str) -> "Password":
        return cls(plaintext, sha512_hex(plaintext))

    def __repr__(self) -> str:
        # keep plaintext out of logs and tracebacks
        return f"Password(digest={self.digest[:12]}...)"


def generate_password(
    rng: RandomSource,
    length: int = DEFAULT_PASSWORD_LENGTH,
    alphabet: str = DEFAULT_ALPHABET,
) -> Password:
    if length < 1:
        raise ValueError("password length must be >= 1")
    if not alphabet:
        raise ValueError("alphabet must be non-empty")
    size = len(alphabet)
    return Password.from_plaintext("".join(alphabet[rng.randrange(size)] for _ in range(length)))


def generate_unique_password(
    rng: RandomSource,
    length: int,
    alphabet: str,
    exists: Callable[[str], bool],
    retry_limit: int = DEFAULT_RETRY_LIMIT,
) -> Password:
    """Draw passwords until one whose digest ``exists`` rejects."""
    for _ in range(retry_limit):
        password = generate_password(rng, length, alphabet)
        if not exists(password.digest):
            return password
    raise GenerationExhausted(f"no unused password after {retry_limit} attempts")
