"""Command-line stand-ins for the pin device, mobile client, ATM emulator, admin seeder and daemon.

Exit codes: 0 success, 1 authentication failed / denied, 2 usage, 3 transport.
"""

from __future__ import annotations

import argparse
import logging
import signal
import ssl
import sys
import threading
from pathlib import Path

from .client import TransportError, admin_command, request_password
from .config import ConfigError, ServerConfig, load_config
from .geo import read_atm_csv
from .otpcore import pin_for_now
from .server import LappsDaemon, LappsService, system_clock
from .store import LappStore, StoreError, read_user_csv, seed_store
from .wire import ParseError, parse_request

EXIT_OK, EXIT_DENIED, EXIT_USAGE, EXIT_TRANSPORT = 0, 1, 2, 3

log = logging.getLogger("lapps")


def _setup_logging(level: str = "INFO") -> None:
    logging.basicConfig(stream=sys.stderr, level=level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")


def _nonempty(text: str) -> str:
    if not text:
        raise argparse.ArgumentTypeError("must be non-empty")
    return text


def _now(args: argparse.Namespace) -> int:
    return args.now_ms if args.now_ms is not None else system_clock()


def _add_now(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--now-ms", type=int, default=None, help="override the clock (epoch ms)")


# lapps-pin

def pin_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lapps-pin", description="Print the current 8-digit pin.")
    parser.add_argument("--user-id", required=True, type=_nonempty)
    parser.add_argument("--password", required=True, type=_nonempty, help="fixed password")
    _add_now(parser)
    args = parser.parse_args(argv)
    now = _now(args)
    if now < 0:
        parser.error("--now-ms must be >= 0")
    print(pin_for_now(args.password, args.user_id, now))
    return EXIT_OK


# lapps-client

def _client_ssl(args: argparse.Namespace) -> ssl.SSLContext | None:
    if not args.tls:
        return None
    return ssl.create_default_context(cafile=args.cafile)


def client_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lapps-client", description="Request a one-time ATM password.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=7001)
    parser.add_argument("--pin", required=True)
    parser.add_argument("--user-id", required=True)
    parser.add_argument("--reg-id", required=True)
    parser.add_argument("--lat", required=True)
    parser.add_argument("--lon", required=True)
    parser.add_argument("--timeout", type=float, default=5.0)
    parser.add_argument("--tls", action="store_true")
    parser.add_argument("--cafile", default=None)
    parser.add_argument("--raw", action="store_true", help="print the SUCCESS line verbatim")
    args = parser.parse_args(argv)
    try:
        request = parse_request(f"GETPASS {args.pin} {args.user_id} {args.reg_id} {args.lat} {args.lon}")
    except ParseError as exc:
        parser.error(str(exc))
    try:
        response, line = request_password(args.host, args.port, request, args.timeout, _client_ssl(args))
    except (TransportError, ssl.SSLError) as exc:
        print(f"lapps-client: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ValueError as exc:
        print(f"lapps-client: undecodable response: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    if not response.ok:
        print(line)
        return EXIT_DENIED
    print(line if args.raw else f"{response.atm_id} {response.password}")
    return EXIT_OK


# lapps-atm

def atm_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lapps-atm", description="ATM emulator: log in with a one-time password.")
    parser.add_argument("--atm-id", required=True, type=_nonempty)
    parser.add_argument("--user-id", required=True, type=_nonempty)
    parser.add_argument("--password", required=True, type=_nonempty)
    target = parser.add_mutually_exclusive_group(required=True)
    target.add_argument("--store", type=Path, help="operate on a snapshot file directly")
    target.add_argument("--admin-port", type=int, help="daemon admin port")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--timeout", type=float, default=5.0)
    _add_now(parser)
    args = parser.parse_args(argv)
    for token in (args.atm_id, args.user_id, args.password):
        if any(c.isspace() for c in token):
            parser.error("identifiers and password may not contain whitespace")

    if args.admin_port is not None:
        if args.now_ms is not None:
            parser.error("--now-ms only applies with --store")
        try:
            reply = admin_command(args.host, args.admin_port,
                                  f"ATMLOGIN {args.atm_id} {args.user_id} {args.password}", args.timeout)
        except TransportError as exc:
            print(f"lapps-atm: {exc}", file=sys.stderr)
            return EXIT_TRANSPORT
        ok = reply == "LOGIN OK"
    else:
        try:
            store = LappStore.restore(args.store)
        except (OSError, StoreError) as exc:
            print(f"lapps-atm: store unavailable: {exc}", file=sys.stderr)
            return EXIT_TRANSPORT
        ok = store.atm_login(args.atm_id, args.user_id, args.password, _now(args))
        if ok:
            try:
                store.snapshot(args.store)
            except OSError as exc:
                print(f"lapps-atm: cannot record use: {exc}", file=sys.stderr)
                return EXIT_TRANSPORT
    print("LOGIN OK" if ok else "DENIED")
    return EXIT_OK if ok else EXIT_DENIED


# lapps-admin

def admin_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lapps-admin", description="Seed and inspect lappStore snapshots.")
    sub = parser.add_subparsers(dest="command", required=True)
    seed = sub.add_parser("seed", help="build a snapshot from user and ATM CSV files")
    seed.add_argument("--users", type=Path, required=True)
    seed.add_argument("--atms", type=Path, required=True)
    seed.add_argument("--out", type=Path, required=True)
    stats = sub.add_parser("stats", help="print users/atms/passwords/allocations counts")
    stats.add_argument("--snapshot", type=Path, required=True)
    args = parser.parse_args(argv)

    if args.command == "stats":
        try:
            store = LappStore.restore(args.snapshot)
        except (OSError, StoreError) as exc:
            print(f"lapps-admin: {exc}", file=sys.stderr)
            return EXIT_TRANSPORT
        print(" ".join(str(n) for n in store.counts()))
        return EXIT_OK

    try:
        store = seed_store(read_user_csv(args.users), read_atm_csv(args.atms))
    except (ValueError, StoreError) as exc:
        print(f"lapps-admin: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"lapps-admin: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    store.snapshot(args.out)
    print(" ".join(str(n) for n in store.counts()))
    return EXIT_OK


# lappsd

def build_store(config: ServerConfig, restore_path: Path | None = None) -> LappStore:
    if restore_path is not None:
        return LappStore.restore(restore_path)
    if config.snapshot_path is not None and config.snapshot_path.exists():
        return LappStore.restore(config.snapshot_path)
    users = read_user_csv(config.seed_users) if config.seed_users else []
    atms = read_atm_csv(config.seed_atms) if config.seed_atms else []
    return seed_store(users, atms)


def lappsd_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lappsd", description="LAPPS password server.")
    parser.add_argument("--config", type=Path, required=True)
    parser.add_argument("--snapshot-restore", type=Path, default=None)
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)
    try:
        config = load_config(args.config)
        store = build_store(config, args.snapshot_restore)
    except (ConfigError, ValueError, StoreError) as exc:
        log.error("startup failed: %s", exc)
        return EXIT_USAGE
    except OSError as exc:
        log.error("startup failed: %s", exc)
        return EXIT_TRANSPORT
    try:
        daemon = LappsDaemon(LappsService(config, store))
    except OSError as exc:
        log.error("cannot bind %s:%d: %s", config.listen_host, config.listen_port, exc)
        return EXIT_TRANSPORT

    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    with daemon:
        # stdout carries the bound port so wrappers can use listen.port=0
        print(f"listening {daemon.address[0]} {daemon.address[1]}", flush=True)
        if daemon.admin_address is not None:
            print(f"admin {daemon.admin_address[0]} {daemon.admin_address[1]}", flush=True)
        stop.wait()
    log.info("shut down")
    return EXIT_OK
