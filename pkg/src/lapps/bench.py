"""Per-stage timing of in-process GETPASS runs, reported in the shape of the performance table."""

from __future__ import annotations

import argparse
import csv
import io
import math
import random
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import ServerConfig
from .geo import GeoPoint, METERS_PER_DEGREE
from .otpcore import pin_for_now, sha512_hex
from .server import StageTimings, handle_getpass
from .store import LappStore, UserRecord
from .wire import GetPassRequest, ResponseMode

# (label, StageTimings attribute) in the table's row order
ROWS = (
    ("Total response time", "total_ms"),
    ("Pin number authentication", "pin_auth_ms"),
    ("Generate unique password", "gen_password_ms"),
    ("Find closest ATM", "find_atm_ms"),
    ("QR code generation", "qr_gen_ms"),
    ("Store allocation", "store_alloc_ms"),
)

BENCH_ORIGIN = GeoPoint(51.5074, -0.1278)
BENCH_START_MS = 1_700_000_000_000


@dataclass(frozen=True)
class BenchRow:
    label: str
    median_ms: float
    percent: int


@dataclass(frozen=True)
class BenchReport:
    runs: int
    mode: ResponseMode
    rows: tuple[BenchRow, ...]
    failures: int = 0

    def row(self, label: str) -> BenchRow:
        return next(r for r in self.rows if r.label == label)

    def to_text(self) -> str:
        width = max(len(r.label) for r in self.rows)
        lines = [f"{'Test case':<{width}}  {'Median (ms)':>11}  {'% of total':>10}"]
        lines += [f"{r.label:<{width}}  {r.median_ms:>11.3f}  {r.percent:>10d}" for r in self.rows]
        lines.append(f"({self.runs} runs, {self.mode.value} mode, {self.failures} failed)")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test_case", "median_ms", "percent_of_total"])
        for r in self.rows:
            w.writerow([r.label, f"{r.median_ms:.6f}", r.percent])
        return buf.getvalue()


def summarize(timings: list[StageTimings], mode: ResponseMode, failures: int = 0) -> BenchReport:
    medians = {attr: statistics.median(getattr(t, attr) for t in timings) for _, attr in ROWS}
    total = medians["total_ms"]
    rows = tuple(
        BenchRow(label, medians[attr], round(100 * medians[attr] / total) if total > 0 else 0)
        for label, attr in ROWS
    )
    return BenchReport(len(timings), mode, rows, failures)


def bench_fixture(n_atms: int, n_users: int | None = None) -> tuple[LappStore, list[GeoPoint], list[tuple[str, str, str]]]:
    """ATMs on a 100 m grid near the origin, plus users as (user_id, reg_id, fixed password)."""
    store = LappStore()
    side = max(1, math.ceil(math.sqrt(n_atms)))
    step = 100.0 / METERS_PER_DEGREE
    coslat = math.cos(math.radians(BENCH_ORIGIN.lat_deg))
    positions = []
    for i in range(n_atms):
        p = GeoPoint(BENCH_ORIGIN.lat_deg + (i // side) * step,
                     BENCH_ORIGIN.lon_deg + (i % side) * step / coslat)
        store.add_atm(f"atm{i}", p)
        positions.append(p)
    users = []
    for i in range(n_users or max(n_atms, 1)):
        uid, reg, fixed = f"user{i}", f"reg{i}", f"fixed-{i}"
        store.add_user(UserRecord(uid, reg, sha512_hex(fixed), f"Bench User {i}"))
        users.append((uid, reg, fixed))
    return store, positions, users


def run_bench(
    n_runs: int = 80,
    n_atms: int = 10,
    mode: ResponseMode = ResponseMode.TEXT,
    seed: int = 0,
    parallel: int = 1,
) -> BenchReport:
    store, positions, users = bench_fixture(n_atms)
    config = ServerConfig(response_mode=mode)
    rng = random.Random(seed)
    # ~5 m north of an ATM: inside the radius of exactly one of them
    offset = 5.0 / METERS_PER_DEGREE

    def one(i: int) -> StageTimings | None:
        uid, reg, fixed = users[i % len(users)]
        atm = positions[i % len(positions)]
        now = BENCH_START_MS + i * 1000
        req = GetPassRequest(pin_for_now(fixed, uid, now), uid, reg, atm.lat_deg + offset, atm.lon_deg)
        outcome = handle_getpass(req, now, store, store.atms, rng, config)
        return outcome.timings if outcome.response.ok else None

    if parallel > 1:
        with ThreadPoolExecutor(parallel) as pool:
            results = list(pool.map(one, range(n_runs)))
    else:
        results = [one(i) for i in range(n_runs)]
    timings = [t for t in results if t is not None]
    if not timings:
        raise RuntimeError("every bench run failed")
    return summarize(timings, mode, failures=len(results) - len(timings))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lapps-bench", description="Median per-stage GETPASS timings.")
    parser.add_argument("--runs", type=int, default=80)
    parser.add_argument("--atms", type=int, default=10)
    parser.add_argument("--mode", choices=[m.value for m in ResponseMode], default="text")
    parser.add_argument("--csv", type=Path, default=None, help="also write the report as CSV")
    parser.add_argument("--parallel", type=int, default=1, metavar="N", help="worker threads")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if args.runs < 1 or args.atms < 1 or args.parallel < 1:
        parser.error("--runs, --atms and --parallel must be >= 1")
    started = time.perf_counter()
    report = run_bench(args.runs, args.atms, ResponseMode(args.mode), args.seed, args.parallel)
    print(report.to_text())
    print(f"wall time {time.perf_counter() - started:.2f}s", file=sys.stderr)
    if args.csv is not None:
        args.csv.write_text(report.to_csv(), encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
