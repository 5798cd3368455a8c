from __future__ import annotations

import math
import random

import pytest

from lapps.config import ServerConfig
from lapps.geo import EARTH_RADIUS_M, GeoPoint
from lapps.otpcore import sha512_hex
from lapps.server import LappsDaemon, LappsService
from lapps.store import LappStore, UserRecord

T0 = 1_700_000_040_000  # a whole minute


def meters_north(p: GeoPoint, meters: float) -> GeoPoint:
    """Point ``meters`` due north along the meridian (pi*R*delta/180 inverted)."""
    return GeoPoint(p.lat_deg + meters * 180.0 / (math.pi * EARTH_RADIUS_M), p.lon_deg)


class FakeClock:
    def __init__(self, now_ms: int = T0) -> None:
        self.now_ms = now_ms

    def __call__(self) -> int:
        return self.now_ms

    def advance(self, ms: int) -> None:
        self.now_ms += ms


USERS = {
    # user_id: (reg_id, fixed password)
    "u001": ("r001", "1234"),
    "u002": ("r002", "hunter2"),
}
ATM1 = GeoPoint(51.0, 0.0)


def make_store() -> LappStore:
    store = LappStore()
    for uid, (reg, fixed) in USERS.items():
        store.add_user(UserRecord(uid, reg, sha512_hex(fixed), f"name of {uid}"))
    store.add_atm("atm1", ATM1)
    store.add_atm("atm2", GeoPoint(51.01, 0.0))
    return store


@pytest.fixture
def store() -> LappStore:
    return make_store()


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def start_daemon():
    """Factory: start a daemon on ephemeral ports; all are stopped at teardown."""
    started: list[LappsDaemon] = []

    def factory(store: LappStore, clock: FakeClock, rng=None, **config) -> LappsDaemon:
        config.setdefault("listen_port", 0)
        config.setdefault("admin_port", 0)
        service = LappsService(ServerConfig(**config), store, clock, rng or random.Random(7))
        daemon = LappsDaemon(service).start()
        started.append(daemon)
        return daemon

    yield factory
    for d in started:
        d.stop()


# --- acceptance reporting ---------------------------------------------------

_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = _markers.get(report.nodeid)
    if marker is None:
        return
    number, title = marker
    _criteria.setdefault(number, (title, []))[1].append(report.outcome)


_markers: dict[str, tuple[int, str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _markers[item.nodeid] = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcomes = _criteria[number]
        verdict = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}")
