"""The lappStore: users, ATMs, issued password digests and live allocations.

Mutations are serialized behind one re-entrant lock. The two database
triggers of the original design (drop expired allocations, drop used
allocations) run as sweeps right after every allocation insert.
Callers always pass ``now_ms``; the store never reads a clock.
"""

from __future__ import annotations

import contextlib
import csv
import logging
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .geo import AtmRecord, AtmRegistry, GeoPoint
from .otpcore import is_hex_digest, sha512_hex

log = logging.getLogger(__name__)

SECTIONS = ("#users", "#atms", "#passwords", "#allocations")
DEFAULT_PASSWORD_WARN_COUNT = 1_000_000


class StoreError(Exception):
    pass


class ReferentialError(StoreError):
    pass


class NotFoundError(StoreError):
    pass


class SnapshotError(StoreError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


def _check_field(name: str, value: str) -> None:
    if any(c in value for c in "\t\r\n"):
        raise ValueError(f"{name} may not contain tabs or newlines: {value!r}")


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    reg_id: str
    fp_hash: str
    name: str = ""

    def __post_init__(self) -> None:
        if not self.user_id or any(c.isspace() for c in self.user_id):
            raise ValueError(f"invalid user id {self.user_id!r}")
        if not is_hex_digest(self.fp_hash):
            raise ValueError("fp_hash must be 128 lowercase hex chars")
        _check_field("reg_id", self.reg_id)
        _check_field("name", self.name)


@dataclass(frozen=True)
class PasswordRecord:
    digest: str
    expiry_ms: int


@dataclass
class AllocationRecord:
    user_id: str
    digest: str
    atm_id: str
    used: bool = False


class LappStore:
    def __init__(self, password_warn_count: int = DEFAULT_PASSWORD_WARN_COUNT) -> None:
        self.users: dict[str, UserRecord] = {}
        self.atms = AtmRegistry()
        self.passwords: dict[str, PasswordRecord] = {}
        # keyed by user: at most one allocation per user by construction
        self.allocations: dict[str, AllocationRecord] = {}
        self._by_digest: dict[str, str] = {}
        self._lock = threading.RLock()
        self.password_warn_count = password_warn_count
        self._warned = False

    @contextlib.contextmanager
    def writer(self) -> Iterator["LappStore"]:
        """Hold the writer lock across several operations."""
        with self._lock:
            yield self

    # seeding

    def add_user(self, user: UserRecord) -> None:
        with self._lock:
            if user.user_id in self.users:
                raise StoreError(f"duplicate user id {user.user_id!r}")
            self.users[user.user_id] = user

    def add_atm(self, atm_id: str, position: GeoPoint) -> None:
        with self._lock:
            try:
                self.atms.add(AtmRecord(atm_id, position))
            except KeyError:
                raise StoreError(f"duplicate atm id {atm_id!r}") from None

    # queries

    def find_user(self, user_id: str) -> UserRecord | None:
        return self.users.get(user_id)

    def password_digest_exists(self, digest: str) -> bool:
        return digest in self.passwords

    def allocation_for(self, user_id: str) -> AllocationRecord | None:
        with self._lock:
            a = self.allocations.get(user_id)
            return None if a is None else AllocationRecord(a.user_id, a.digest, a.atm_id, a.used)

    def counts(self) -> tuple[int, int, int, int]:
        with self._lock:
            return len(self.users), len(self.atms), len(self.passwords), len(self.allocations)

    # mutations

    def replace_allocation(self, user_id: str, digest: str, atm_id: str, expiry_ms: int, now_ms: int) -> None:
        """Drop any allocation the user holds, then insert the new one and fire both sweeps."""
        with self._lock:
            if user_id not in self.users:
                raise ReferentialError(f"unknown user {user_id!r}")
            if atm_id not in self.atms:
                raise ReferentialError(f"unknown atm {atm_id!r}")
            if not is_hex_digest(digest):
                raise ValueError("digest must be 128 lowercase hex chars")
            if digest in self.passwords:
                raise StoreError("password digest already issued")
            old = self.allocations.pop(user_id, None)
            if old is not None:
                del self._by_digest[old.digest]
            self.passwords[digest] = PasswordRecord(digest, expiry_ms)
            self.allocations[user_id] = AllocationRecord(user_id, digest, atm_id)
            self._by_digest[digest] = user_id
            self.sweep_expired(now_ms)
            self.sweep_used()
            if not self._warned and len(self.passwords) > self.password_warn_count:
                self._warned = True
                log.warning("password table holds %d digests (warn threshold %d)",
                            len(self.passwords), self.password_warn_count)

    def _drop(self, victims: list[AllocationRecord]) -> int:
        for a in victims:
            del self.allocations[a.user_id]
            del self._by_digest[a.digest]
        return len(victims)

    def sweep_expired(self, now_ms: int) -> int:
        with self._lock:
            return self._drop([a for a in self.allocations.values()
                               if self.passwords[a.digest].expiry_ms <= now_ms])

    def sweep_used(self) -> int:
        with self._lock:
            return self._drop([a for a in self.allocations.values() if a.used])

    def _match(self, atm_id: str, user_id: str, digest: str) -> AllocationRecord | None:
        a = self.allocations.get(user_id)
        if a is None or a.atm_id != atm_id or a.digest != digest:
            return None
        return a

    def authenticate_atm_login(self, atm_id: str, user_id: str, password_plaintext: str, now_ms: int) -> bool:
        digest = sha512_hex(password_plaintext)
        with self._lock:
            a = self._match(atm_id, user_id, digest)
            return a is not None and not a.used and self.passwords[digest].expiry_ms > now_ms

    def mark_used(self, atm_id: str, user_id: str, digest: str) -> None:
        with self._lock:
            a = self._match(atm_id, user_id, digest)
            if a is None:
                raise NotFoundError("no matching allocation")
            a.used = True

    def atm_login(self, atm_id: str, user_id: str, password_plaintext: str, now_ms: int) -> bool:
        """Authenticate and burn the password in one step."""
        with self._lock:
            if not self.authenticate_atm_login(atm_id, user_id, password_plaintext, now_ms):
                return False
            self.mark_used(atm_id, user_id, sha512_hex(password_plaintext))
            return True

    # consistency

    def integrity_errors(self) -> list[str]:
        errors = []
        with self._lock:
            for uid, a in self.allocations.items():
                if uid != a.user_id:
                    errors.append(f"allocation keyed {uid!r} belongs to {a.user_id!r}")
                if a.user_id not in self.users:
                    errors.append(f"allocation references unknown user {a.user_id!r}")
                if a.atm_id not in self.atms:
                    errors.append(f"allocation references unknown atm {a.atm_id!r}")
                if a.digest not in self.passwords:
                    errors.append(f"allocation references unknown password {a.digest[:12]}")
                if self._by_digest.get(a.digest) != a.user_id:
                    errors.append(f"digest index out of sync for {a.user_id!r}")
            if len(self._by_digest) != len(self.allocations):
                errors.append("digest index size differs from allocation count")
        return errors

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LappStore):
            return NotImplemented
        return (
            self.users == other.users
            and {a.atm_id: a for a in self.atms} == {a.atm_id: a for a in other.atms}
            and self.passwords == other.passwords
            and self.allocations == other.allocations
        )

    # persistence

    def dump_lines(self) -> list[str]:
        with self._lock:
            lines = ["#users"]
            lines += [f"{u.user_id}\t{u.reg_id}\t{u.fp_hash}\t{u.name}" for u in self.users.values()]
            lines.append("#atms")
            lines += [f"{a.atm_id}\t{a.position.lat_deg!r}\t{a.position.lon_deg!r}" for a in self.atms]
            lines.append("#passwords")
            lines += [f"{p.digest}\t{p.expiry_ms}" for p in self.passwords.values()]
            lines.append("#allocations")
            lines += [f"{a.user_id}\t{a.digest}\t{a.atm_id}\t{'true' if a.used else 'false'}"
                      for a in self.allocations.values()]
        return lines

    def snapshot(self, path: str | Path) -> None:
        """Write the full state atomically (temp file + rename)."""
        path = Path(path)
        text = "\n".join(self.dump_lines()) + "\n"
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            with contextlib.suppress(FileNotFoundError):
                os.unlink(tmp)
            raise

    @classmethod
    def restore(cls, path: str | Path, **kwargs) -> "LappStore":
        with open(path, encoding="utf-8", newline="") as fh:
            return cls.from_text(fh.read(), **kwargs)

    @classmethod
    def from_text(cls, text: str, **kwargs) -> "LappStore":
        store = cls(**kwargs)
        if text and not text.endswith("\n"):
            raise SnapshotError(text.count("\n") + 1, "truncated record (no line terminator)")
        lines = text.split("\n")[:-1] if text else []
        section = -1
        for n, line in enumerate(lines, start=1):
            if line.startswith("#"):
                if section + 1 >= len(SECTIONS) or line != SECTIONS[section + 1]:
                    raise SnapshotError(n, f"unexpected section header {line!r}")
                section += 1
                continue
            if section < 0:
                raise SnapshotError(n, "record before #users header")
            fields = line.split("\t")
            try:
                store._load_record(section, fields)
            except (ValueError, StoreError) as exc:
                raise SnapshotError(n, str(exc)) from None
        if section != len(SECTIONS) - 1:
            raise SnapshotError(len(lines) + 1, f"missing section {SECTIONS[section + 1]}")
        return store

    def _load_record(self, section: int, fields: list[str]) -> None:
        expected = (4, 3, 2, 4)[section]
        if len(fields) != expected:
            raise ValueError(f"{SECTIONS[section]} record needs {expected} fields, got {len(fields)}")
        if section == 0:
            self.add_user(UserRecord(*fields))
        elif section == 1:
            self.add_atm(fields[0], GeoPoint(float(fields[1]), float(fields[2])))
        elif section == 2:
            digest, expiry = fields
            if not is_hex_digest(digest):
                raise ValueError("bad password digest")
            if digest in self.passwords:
                raise ValueError("duplicate password digest")
            self.passwords[digest] = PasswordRecord(digest, int(expiry))
        else:
            user_id, digest, atm_id, used = fields
            if used not in ("true", "false"):
                raise ValueError(f"bad boolean {used!r}")
            if user_id not in self.users or atm_id not in self.atms or digest not in self.passwords:
                raise ReferentialError("allocation references a missing record")
            if user_id in self.allocations or digest in self._by_digest:
                raise ValueError("duplicate allocation")
            self.allocations[user_id] = AllocationRecord(user_id, digest, atm_id, used == "true")
            self._by_digest[digest] = user_id


def read_user_csv(path: str | Path) -> list[UserRecord]:
    """Parse a ``userId,regId,fixedPassword,name`` seed; the fixed password is hashed on ingest."""
    records: list[UserRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
            "userId", "regId", "fixedPassword", "name"]:
            raise ValueError(f"{path}:1: expected header userId,regId,fixedPassword,name")
        for row in reader:
            line = reader.line_num
            if None in row.values() or None in row:
                raise ValueError(f"{path}:{line}: wrong number of fields")
            uid = row["userId"].strip()
            if uid in seen:
                raise ValueError(f"{path}:{line}: duplicate userId {uid!r}")
            try:
                records.append(UserRecord(uid, row["regId"].strip(), sha512_hex(row["fixedPassword"]),
                                          row["name"].strip()))
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            seen.add(uid)
    return records


def seed_store(users: list[UserRecord], atms: list[AtmRecord], store: LappStore | None = None) -> LappStore:
    store = store or LappStore()
    for u in users:
        store.add_user(u)
    for a in atms:
        store.add_atm(a.atm_id, a.position)
    return store
