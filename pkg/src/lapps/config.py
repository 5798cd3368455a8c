"""Server configuration from a ``key=value`` properties file."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .otpcore import DEFAULT_ALPHABET
from .wire import ResponseMode

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ServerConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 7001
    admin_port: int | None = None
    radius_m: float = 20.0
    password_length: int = 8
    password_alphabet: str = DEFAULT_ALPHABET
    password_ttl_ms: int = 300_000
    response_mode: ResponseMode = ResponseMode.TEXT
    snapshot_path: Path | None = None
    tls_enabled: bool = False
    tls_cert: Path | None = None
    tls_key: Path | None = None
    seed_users: Path | None = None
    seed_atms: Path | None = None

    def __post_init__(self) -> None:
        if not self.radius_m > 0:
            raise ValueError("radius.m must be > 0")
        if self.password_ttl_ms <= 0:
            raise ValueError("password.ttl.ms must be > 0")
        if self.password_length < 1:
            raise ValueError("password.length must be >= 1")
        alphabet = self.password_alphabet
        if not alphabet or len(set(alphabet)) != len(alphabet) or any(c.isspace() for c in alphabet):
            raise ValueError("password.alphabet must be non-empty, unique, whitespace-free")
        if self.tls_enabled and not (self.tls_cert and self.tls_key):
            raise ValueError("tls.enabled requires tls.cert and tls.key")


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0 or value == float("inf"):
        raise ValueError(f"must be a positive number: {text!r}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(f"must be a positive integer: {text!r}")
    return value


def _alphabet(text: str) -> str:
    if not text or len(set(text)) != len(text) or any(c.isspace() for c in text):
        raise ValueError("alphabet must be non-empty, unique, whitespace-free")
    return text


def _port(text: str) -> int:
    port = int(text)
    if not 0 <= port <= 65535:
        raise ValueError(f"port out of range: {port}")
    return port


_KEYS: dict[str, tuple[str, Callable[[str], Any]]] = {
    "listen.host": ("listen_host", str),
    "listen.port": ("listen_port", _port),
    "admin.port": ("admin_port", _port),
    "radius.m": ("radius_m", _positive_float),
    "password.length": ("password_length", _positive_int),
    "password.alphabet": ("password_alphabet", _alphabet),
    "password.ttl.ms": ("password_ttl_ms", _positive_int),
    "response.mode": ("response_mode", lambda v: ResponseMode(v.lower())),
    "snapshot.path": ("snapshot_path", Path),
    "tls.enabled": ("tls_enabled", _bool),
    "tls.cert": ("tls_cert", Path),
    "tls.key": ("tls_key", Path),
    "seed.users": ("seed_users", Path),
    "seed.atms": ("seed_atms", Path),
}


def parse_config(text: str, base_dir: Path | None = None) -> ServerConfig:
    values: dict[str, Any] = {}
    last_line = 0
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#!":
            continue
        if "=" not in line:
            raise ConfigError(n, f"expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            log.warning("config line %d: unknown key %r ignored", n, key)
            continue
        attr, convert = _KEYS[key]
        try:
            parsed = convert(value)
        except ValueError as exc:
            raise ConfigError(n, f"bad value for {key}: {exc}") from None
        if isinstance(parsed, Path) and base_dir is not None and not parsed.is_absolute():
            parsed = base_dir / parsed
        values[attr] = parsed
        last_line = n
    try:
        return ServerConfig(**values)
    except ValueError as exc:
        # only cross-key checks get here (tls.enabled without cert/key)
        raise ConfigError(last_line, str(exc)) from None


def load_config(path: str | Path) -> ServerConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)
