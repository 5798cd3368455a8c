"""The LAPPS server: GETPASS workflow, TCP daemon and the local admin endpoint."""

from __future__ import annotations

import logging
import secrets
import socketserver
import ssl
import threading
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .config import ServerConfig
from .geo import AtmRegistry
from .otpcore import GenerationExhausted, RandomSource, generate_unique_password, validate_pin
from .store import LappStore
from .wire import (
    ACK_FRAME,
    MAX_LINE_BYTES,
    GetPassRequest,
    MalformedRequest,
    ParseError,
    Response,
    ResponseMode,
    UnknownRequest,
    frame_response,
    parse_request,
)

log = logging.getLogger(__name__)

Clock = Callable[[], int]

UNKNOWN_USER = "unknown user"
BAD_CREDENTIALS = "bad credentials"
NO_ATM = "no ATM within range"
INTERNAL_ERROR = "internal error"
UNKNOWN_REQUEST = "unknown request"
MALFORMED_REQUEST = "malformed request"


def system_clock() -> int:
    return time.time_ns() // 1_000_000


@dataclass
class StageTimings:
    pin_auth_ms: float = 0.0
    find_atm_ms: float = 0.0
    gen_password_ms: float = 0.0
    qr_gen_ms: float = 0.0
    store_alloc_ms: float = 0.0
    total_ms: float = 0.0


class GetPassOutcome(NamedTuple):
    response: Response
    timings: StageTimings
    frame: bytes


class _Stopwatch:
    def __init__(self) -> None:
        self.start = time.perf_counter()

    def lap(self) -> float:
        now = time.perf_counter()
        elapsed = (now - self.start) * 1000.0
        self.start = now
        return elapsed


def _evaluate(
    req: GetPassRequest,
    now_ms: int,
    store: LappStore,
    geo: AtmRegistry,
    rng: RandomSource,
    config: ServerConfig,
    t: StageTimings,
) -> Response:
    watch = _Stopwatch()
    user = store.find_user(req.user_id)
    if user is None:
        t.pin_auth_ms = watch.lap()
        log.info("GETPASS user=%s denied: unknown user", req.user_id)
        return Response.fail(UNKNOWN_USER)
    reg_ok = req.reg_id == user.reg_id
    pin_ok = reg_ok and validate_pin(req.pin, user.fp_hash, user.user_id, now_ms)
    t.pin_auth_ms = watch.lap()
    if not pin_ok:
        log.info("GETPASS user=%s denied: %s", req.user_id, "pin mismatch" if reg_ok else "reg id mismatch")
        return Response.fail(BAD_CREDENTIALS)

    nearest = geo.nearest(req.position, config.radius_m)
    t.find_atm_ms = watch.lap()
    if nearest is None:
        log.info("GETPASS user=%s denied: no ATM within %gm", req.user_id, config.radius_m)
        return Response.fail(NO_ATM)

    with store.writer():
        watch.lap()
        password = generate_unique_password(
            rng, config.password_length, config.password_alphabet, store.password_digest_exists)
        t.gen_password_ms = watch.lap()
        store.replace_allocation(
            user.user_id, password.digest, nearest.atm_id, now_ms + config.password_ttl_ms, now_ms)
        if config.snapshot_path is not None:
            store.snapshot(config.snapshot_path)
        t.store_alloc_ms = watch.lap()
    log.info("GETPASS user=%s allocated atm=%s distance=%.2fm digest=%s",
             user.user_id, nearest.atm_id, nearest.distance_m, password.digest[:16])
    return Response.success(nearest.atm_id, password.plaintext)


def handle_getpass(
    req: GetPassRequest,
    now_ms: int,
    store: LappStore,
    geo: AtmRegistry,
    rng: RandomSource,
    config: ServerConfig,
) -> GetPassOutcome:
    """Run one GETPASS request through pin check, ATM lookup, password issue and framing.

    The first failing step short-circuits to a FAIL response. The returned
    frame is what goes on the wire in the configured response mode.
    """
    started = time.perf_counter()
    timings = StageTimings()
    try:
        response = _evaluate(req, now_ms, store, geo, rng, config, timings)
    except GenerationExhausted:
        log.error("GETPASS user=%s: password space exhausted", req.user_id)
        response = Response.fail(INTERNAL_ERROR)
    except Exception:
        log.exception("GETPASS user=%s: internal error", req.user_id)
        response = Response.fail(INTERNAL_ERROR)
    qr_started = time.perf_counter()
    frame = frame_response(response, config.response_mode)
    if config.response_mode is ResponseMode.QR:
        timings.qr_gen_ms = (time.perf_counter() - qr_started) * 1000.0
    timings.total_ms = (time.perf_counter() - started) * 1000.0
    return GetPassOutcome(response, timings, frame)


class LappsService:
    """Glue between raw request lines and the store, with injectable clock and RNG."""

    def __init__(
        self,
        config: ServerConfig,
        store: LappStore,
        clock: Clock = system_clock,
        rng: RandomSource | None = None,
    ) -> None:
        self.config = config
        self.store = store
        self.clock = clock
        self.rng = rng if rng is not None else secrets.SystemRandom()

    def fail_frame(self, message: str) -> bytes:
        return frame_response(Response.fail(message), self.config.response_mode)

    def respond(self, raw: bytes) -> bytes:
        """Frame the reply to one request line; never raises."""
        try:
            line = raw.decode("utf-8")
            req = parse_request(line)
        except UnicodeDecodeError:
            return self.fail_frame(MALFORMED_REQUEST)
        except UnknownRequest:
            return self.fail_frame(UNKNOWN_REQUEST)
        except (MalformedRequest, ParseError):
            return self.fail_frame(MALFORMED_REQUEST)
        return handle_getpass(req, self.clock(), self.store, self.store.atms, self.rng, self.config).frame

    def atm_login(self, atm_id: str, user_id: str, password: str) -> bool:
        ok = self.store.atm_login(atm_id, user_id, password, self.clock())
        if ok and self.config.snapshot_path is not None:
            with self.store.writer():
                self.store.snapshot(self.config.snapshot_path)
        log.info("ATMLOGIN atm=%s user=%s %s", atm_id, user_id, "ok" if ok else "denied")
        return ok


def _read_line(rfile) -> tuple[bytes | None, bool]:
    """Next request line, or (None, _) at EOF. Overlong lines are drained and flagged."""
    line = rfile.readline(MAX_LINE_BYTES + 1)
    if not line:
        return None, False
    if len(line) > MAX_LINE_BYTES and not line.endswith(b"\n"):
        while True:
            rest = rfile.readline(MAX_LINE_BYTES)
            if not rest or rest.endswith(b"\n"):
                break
        return line, True
    return line, False


class _GetPassHandler(socketserver.StreamRequestHandler):
    server: "_LappsTCPServer"

    def handle(self) -> None:
        service = self.server.service
        try:
            self.wfile.write(ACK_FRAME)
            while True:
                line, overlong = _read_line(self.rfile)
                if line is None:
                    break
                if overlong:
                    self.wfile.write(service.fail_frame(MALFORMED_REQUEST))
                    continue
                self.wfile.write(service.respond(line))
        except (OSError, ssl.SSLError) as exc:
            log.warning("connection %s dropped: %s", self.client_address, exc)


class _AdminHandler(socketserver.StreamRequestHandler):
    """Local-only endpoint used by the ATM emulator.

    ``ATMLOGIN <atmId> <userId> <password>`` -> ``LOGIN OK`` | ``DENIED``;
    ``STATS`` -> ``STATS <users> <atms> <passwords> <allocations>``.
    """

    server: "_LappsTCPServer"

    def handle(self) -> None:
        service = self.server.service
        try:
            self.wfile.write(ACK_FRAME)
            while True:
                line, overlong = _read_line(self.rfile)
                if line is None:
                    break
                tokens = line.decode("utf-8", errors="replace").split()
                if overlong or not tokens:
                    reply = "ERROR malformed"
                elif tokens[0] == "ATMLOGIN" and len(tokens) == 4:
                    reply = "LOGIN OK" if service.atm_login(*tokens[1:]) else "DENIED"
                elif tokens[0] == "STATS" and len(tokens) == 1:
                    reply = "STATS " + " ".join(str(n) for n in service.store.counts())
                else:
                    reply = "ERROR unknown command"
                self.wfile.write((reply + "\n").encode("utf-8"))
        except OSError as exc:
            log.warning("admin connection %s dropped: %s", self.client_address, exc)


class _LappsTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True
    request_queue_size = 128

    def __init__(self, address, handler, service: LappsService, ssl_context: ssl.SSLContext | None = None):
        self.service = service
        self.ssl_context = ssl_context
        super().__init__(address, handler)

    def get_request(self):
        sock, addr = super().get_request()
        if self.ssl_context is not None:
            # handshake runs lazily in the handler thread, not the accept loop
            sock = self.ssl_context.wrap_socket(sock, server_side=True, do_handshake_on_connect=False)
        return sock, addr


def server_ssl_context(config: ServerConfig) -> ssl.SSLContext | None:
    if not config.tls_enabled:
        return None
    ctx = ssl.create_default_context(ssl.Purpose.CLIENT_AUTH)
    ctx.load_cert_chain(str(config.tls_cert), str(config.tls_key))
    return ctx


class LappsDaemon:
    """Owns the listening sockets. ``start()`` returns once bound; ``stop()`` shuts down."""

    def __init__(self, service: LappsService) -> None:
        self.service = service
        config = service.config
        self._main = _LappsTCPServer(
            (config.listen_host, config.listen_port), _GetPassHandler, service, server_ssl_context(config))
        self._admin = None
        if config.admin_port is not None:
            self._admin = _LappsTCPServer(("127.0.0.1", config.admin_port), _AdminHandler, service)
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> tuple[str, int]:
        return self._main.server_address[:2]

    @property
    def admin_address(self) -> tuple[str, int] | None:
        return None if self._admin is None else self._admin.server_address[:2]

    def start(self) -> "LappsDaemon":
        for srv in filter(None, (self._main, self._admin)):
            t = threading.Thread(target=srv.serve_forever, name=f"lapps-{srv.server_address[1]}", daemon=True)
            t.start()
            self._threads.append(t)
        log.info("listening on %s:%d%s", *self.address,
                 f", admin on 127.0.0.1:{self.admin_address[1]}" if self._admin else "")
        return self

    def stop(self) -> None:
        for srv in filter(None, (self._main, self._admin)):
            srv.shutdown()
            srv.server_close()
        for t in self._threads:
            t.join(timeout=5)
        store, path = self.service.store, self.service.config.snapshot_path
        if path is not None:
            with store.writer():
                store.snapshot(path)

    def __enter__(self) -> "LappsDaemon":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(config: ServerConfig, store: LappStore, stop: threading.Event | None = None,
          clock: Clock = system_clock) -> None:
    """Serve until ``stop`` is set (or forever)."""
    stop = stop or threading.Event()
    with LappsDaemon(LappsService(config, store, clock)):
        stop.wait()

