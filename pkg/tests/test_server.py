import io
import logging
import random
import shutil
import socket
import ssl
import subprocess
import threading
from unittest import mock

import pytest

from lapps.client import admin_command, request_password
from lapps.config import ServerConfig
from lapps.otpcore import DEFAULT_ALPHABET, pin_for_now, sha512_hex
from lapps.server import (
    BAD_CREDENTIALS,
    INTERNAL_ERROR,
    NO_ATM,
    UNKNOWN_USER,
    LappsService,
    handle_getpass,
)
from lapps.store import LappStore
from lapps.wire import ACK_FRAME, GetPassRequest, ResponseMode, parse_response, read_response

from conftest import ATM1, T0, USERS, meters_north


def request(user="u001", meters=10.0, now=T0, pin=None, reg=None):
    reg_id, fixed = USERS[user]
    pos = meters_north(ATM1, meters)
    return GetPassRequest(pin or pin_for_now(fixed, user, now), user, reg or reg_id, pos.lat_deg, pos.lon_deg)


def run(store, req, now=T0, rng=None, **config):
    return handle_getpass(req, now, store, store.atms, rng or random.Random(1), ServerConfig(**config))


def test_success_allocates(store):
    out = run(store, request())
    assert out.response.ok and out.response.atm_id == "atm1"
    assert len(out.response.password) == 8
    assert set(out.response.password) <= set(DEFAULT_ALPHABET)
    a = store.allocation_for("u001")
    assert a.atm_id == "atm1" and not a.used
    assert a.digest == sha512_hex(out.response.password)
    assert store.passwords[a.digest].expiry_ms == T0 + 300_000
    assert out.frame == f"SUCCESS: atm1 {out.response.password}\n".encode()


def test_bad_pin(store):
    assert pin_for_now("1234", "u001", T0) != "00000000"
    out = run(store, request(pin="00000000"))
    assert out.response.message == BAD_CREDENTIALS
    assert store.counts()[2:] == (0, 0)


def test_reg_id_mismatch_same_message(store, caplog):
    caplog.set_level(logging.INFO)
    out = run(store, request(reg="r999"))
    assert out.response.message == BAD_CREDENTIALS
    assert "reg id mismatch" in caplog.text


def test_unknown_user(store):
    req = GetPassRequest("12345678", "ghost", "r", 51.0, 0.0)
    assert run(store, req).response.message == UNKNOWN_USER


def test_no_atm_in_range(store):
    out = run(store, request(meters=25))
    assert out.response.message == NO_ATM
    assert store.counts()[2:] == (0, 0)


def test_second_request_replaces(store):
    first = run(store, request())
    second = run(store, request(now=T0 + 1000), now=T0 + 1000)
    assert first.response.ok and second.response.ok
    assert first.response.password != second.response.password
    assert store.allocation_for("u001").digest == sha512_hex(second.response.password)
    assert store.counts() == (2, 2, 2, 1)


def test_radius_and_ttl_from_config(store):
    assert run(store, request(meters=25), radius_m=30).response.ok
    out = run(store, request(user="u002", meters=5), password_ttl_ms=1000, password_length=12)
    assert len(out.response.password) == 12
    assert store.passwords[store.allocation_for("u002").digest].expiry_ms == T0 + 1000


def test_failed_pin_never_touches_geo_or_generator(store):
    geo = mock.Mock(wraps=store.atms)
    rng = mock.Mock(wraps=random.Random(1))
    out = handle_getpass(request(pin="00000000"), T0, store, geo, rng, ServerConfig())
    assert not out.response.ok
    geo.nearest.assert_not_called()
    rng.randrange.assert_not_called()
    handle_getpass(request(), T0, store, geo, rng, ServerConfig())
    geo.nearest.assert_called_once()
    assert rng.randrange.call_count == 8


def test_no_atm_never_touches_generator(store):
    rng = mock.Mock(wraps=random.Random(1))
    handle_getpass(request(meters=50), T0, store, store.atms, rng, ServerConfig())
    rng.randrange.assert_not_called()


def test_exhausted_generator_is_internal_error(store, caplog):
    with mock.patch.object(LappStore, "password_digest_exists", return_value=True):
        out = run(store, request())
    assert out.response.message == INTERNAL_ERROR
    assert store.allocation_for("u001") is None


def test_plaintext_only_in_response(store, tmp_path, caplog):
    caplog.set_level(logging.DEBUG)
    snap = tmp_path / "snap.txt"
    out = run(store, request(), snapshot_path=snap)
    pw = out.response.password
    assert pw not in caplog.text
    assert pw not in snap.read_text()
    assert sha512_hex(pw) in snap.read_text()
    assert LappStore.restore(snap) == store


def test_timings(store):
    text = run(store, request()).timings
    assert text.qr_gen_ms == 0.0
    assert text.total_ms > 0
    qr = run(store, request(now=T0 + 5), now=T0 + 5, response_mode=ResponseMode.QR).timings
    assert qr.qr_gen_ms > 0
    for t in (text, qr):
        parts = [t.pin_auth_ms, t.find_atm_ms, t.gen_password_ms, t.qr_gen_ms, t.store_alloc_ms]
        assert all(p >= 0 for p in parts)
        assert sum(parts) <= t.total_ms


def test_qr_mode_frame_decodes(store):
    out = run(store, request(), response_mode=ResponseMode.QR)
    assert out.frame.startswith(b"QR ")
    resp, line = read_response(io.BytesIO(out.frame))
    assert resp == out.response
    assert line == f"SUCCESS: atm1 {out.response.password}"


def test_service_respond_errors(store, clock):
    svc = LappsService(ServerConfig(), store, clock, random.Random(1))
    assert svc.respond(b"HELP\n") == b"FAIL: unknown request\n"
    assert svc.respond(b"GETPASS 1 2\n") == b"FAIL: malformed request\n"
    assert svc.respond(b"\xff\xfe\n") == b"FAIL: malformed request\n"


# --- over TCP ---------------------------------------------------------------

def _session(address):
    sock = socket.create_connection(address, timeout=5)
    return sock, sock.makefile("rb")


def test_ack_first(store, clock, start_daemon):
    d = start_daemon(store, clock)
    sock, rfile = _session(d.address)
    with sock, rfile:
        assert rfile.readline() == ACK_FRAME


def test_garbage_then_valid_on_same_connection(store, clock, start_daemon):
    d = start_daemon(store, clock)
    sock, rfile = _session(d.address)
    with sock, rfile:
        rfile.readline()
        sock.sendall(b"\x00\x01garbage\xff\n")
        assert rfile.readline() == b"FAIL: malformed request\n"
        sock.sendall(b"HELP\n")
        assert rfile.readline() == b"FAIL: unknown request\n"
        sock.sendall(b"x" * 70_000 + b"\n")
        assert rfile.readline() == b"FAIL: malformed request\n"
        sock.sendall((request().to_line() + "\n").encode())
        assert rfile.readline().startswith(b"SUCCESS: atm1 ")


def test_fifty_concurrent_clients(store, clock, start_daemon):
    d = start_daemon(store, clock)
    results = []

    def one(user):
        resp, _ = request_password(*d.address, request(user=user))
        results.append((user, resp))

    threads = [threading.Thread(target=one, args=(["u001", "u002"][i % 2],)) for i in range(50)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(results) == 50 and all(r.ok for _, r in results)
    assert store.counts() == (2, 2, 50, 2)
    assert store.integrity_errors() == []


def test_admin_endpoint(store, clock, start_daemon):
    d = start_daemon(store, clock)
    resp, _ = request_password(*d.address, request())
    host, port = d.admin_address
    assert admin_command(host, port, "STATS") == "STATS 2 2 1 1"
    assert admin_command(host, port, f"ATMLOGIN atm2 u001 {resp.password}") == "DENIED"
    assert admin_command(host, port, f"ATMLOGIN atm1 u001 {resp.password}") == "LOGIN OK"
    assert admin_command(host, port, f"ATMLOGIN atm1 u001 {resp.password}") == "DENIED"
    assert admin_command(host, port, "DROP TABLES").startswith("ERROR")


def test_snapshot_survives_restart(store, clock, start_daemon, tmp_path):
    snap = tmp_path / "snap.txt"
    d = start_daemon(store, clock, snapshot_path=snap)
    resp, _ = request_password(*d.address, request())
    d.stop()
    restored = LappStore.restore(snap)
    assert restored.authenticate_atm_login("atm1", "u001", resp.password, clock())


@pytest.mark.skipif(shutil.which("openssl") is None, reason="openssl CLI not available")
def test_tls_transport(store, clock, start_daemon, tmp_path):
    cert, key = tmp_path / "cert.pem", tmp_path / "key.pem"
    subprocess.run(
        ["openssl", "req", "-x509", "-newkey", "rsa:2048", "-nodes", "-days", "1",
         "-subj", "/CN=localhost", "-addext", "subjectAltName=DNS:localhost,IP:127.0.0.1",
         "-keyout", str(key), "-out", str(cert)],
        check=True, capture_output=True)
    d = start_daemon(store, clock, tls_enabled=True, tls_cert=cert, tls_key=key)
    ctx = ssl.create_default_context(cafile=str(cert))
    resp, line = request_password("127.0.0.1", d.address[1], request(), ssl_context=ctx)
    assert resp.ok and parse_response(line) == resp
