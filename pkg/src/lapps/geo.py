"""ATM registry with radius-bounded nearest-neighbour lookup on WGS84 coordinates."""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

EARTH_RADIUS_M = 6_371_008.8
METERS_PER_DEGREE = 111_194.93
DEFAULT_RADIUS_M = 20.0
POLAR_LIMIT_DEG = 89.0
# absorbs float rounding at the rectangle edge (~0.1 mm)
_BOX_PAD_DEG = 1e-9


class GeoError(ValueError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    lat_deg: float
    lon_deg: float

    def __post_init__(self) -> None:
        for name, value, bound in (("latitude", self.lat_deg, 90.0), ("longitude", self.lon_deg, 180.0)):
            if not math.isfinite(value):
                raise GeoError(f"{name} must be finite, got {value!r}")
            if abs(value) > bound:
                raise GeoError(f"{name} {value} outside [-{bound:g}, {bound:g}]")


@dataclass(frozen=True)
class AtmRecord:
    atm_id: str
    position: GeoPoint


@dataclass(frozen=True)
class NearestResult:
    atm_id: str
    distance_m: float


@dataclass(frozen=True)
class BoundingBox:
    min_lat: float
    max_lat: float
    min_lon: float
    max_lon: float
    center_lon: float
    half_lon: float

    def contains(self, p: GeoPoint) -> bool:
        if not self.min_lat <= p.lat_deg <= self.max_lat:
            return False
        # compare on the wrapped longitude difference so boxes may straddle 180
        dlon = (p.lon_deg - self.center_lon + 180.0) % 360.0 - 180.0
        return abs(dlon) <= self.half_lon


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of mean Earth radius."""
    if a == b:
        return 0.0
    phi1, phi2 = math.radians(a.lat_deg), math.radians(b.lat_deg)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon_deg - a.lon_deg)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, h)))


def bbox_prefilter(center: GeoPoint, radius_m: float) -> BoundingBox:
    """Lat/lon rectangle guaranteed to hold every point within ``radius_m`` of ``center``."""
    if not radius_m > 0:
        raise GeoError(f"radius must be positive, got {radius_m}")
    if abs(center.lat_deg) > POLAR_LIMIT_DEG:
        raise GeoError(f"latitude {center.lat_deg} is in the polar region; rectangle degenerates")
    dlat = radius_m / METERS_PER_DEGREE
    dlon = dlat / math.cos(math.radians(center.lat_deg))
    return BoundingBox(
        min_lat=center.lat_deg - dlat - _BOX_PAD_DEG,
        max_lat=center.lat_deg + dlat + _BOX_PAD_DEG,
        min_lon=center.lon_deg - dlon - _BOX_PAD_DEG,
        max_lon=center.lon_deg + dlon + _BOX_PAD_DEG,
        center_lon=center.lon_deg,
        half_lon=dlon + _BOX_PAD_DEG,
    )


def _pick_nearest(candidates: Iterable[tuple[str, float]], radius_m: float) -> NearestResult | None:
    best: tuple[float, str] | None = None
    for atm_id, d in candidates:
        if d < radius_m and (best is None or (d, atm_id) < best):
            best = (d, atm_id)
    return None if best is None else NearestResult(best[1], best[0])


def nearest_atm(
    atms: Iterable[AtmRecord],
    user: GeoPoint,
    radius_m: float = DEFAULT_RADIUS_M,
    distance: Callable[[GeoPoint, GeoPoint], float] = haversine_m,
) -> NearestResult | None:
    """Closest ATM strictly inside ``radius_m``; ties go to the smallest atm_id."""
    if not radius_m > 0:
        raise GeoError(f"radius must be positive, got {radius_m}")
    try:
        box = bbox_prefilter(user, radius_m)
    except GeoError:
        # near the poles the rectangle is useless: measure everything
        box = None
    return _pick_nearest(
        ((a.atm_id, distance(user, a.position)) for a in atms if box is None or box.contains(a.position)),
        radius_m,
    )


def nearest_atm_exhaustive(
    atms: Iterable[AtmRecord],
    user: GeoPoint,
    radius_m: float = DEFAULT_RADIUS_M,
    distance: Callable[[GeoPoint, GeoPoint], float] = haversine_m,
) -> NearestResult | None:
    """Naive variant: distance to every ATM, no rectangle."""
    return _pick_nearest(((a.atm_id, distance(user, a.position)) for a in atms), radius_m)


class AtmRegistry:
    """In-memory ATM table. Reads are lock-free; writes take a lock."""

    def __init__(
        self,
        atms: Iterable[AtmRecord] = (),
        distance: Callable[[GeoPoint, GeoPoint], float] = haversine_m,
    ) -> None:
        self._atms: dict[str, AtmRecord] = {}
        self._lock = threading.Lock()
        self.distance = distance
        for atm in atms:
            self.add(atm)

    def add(self, atm: AtmRecord) -> None:
        if not atm.atm_id or any(c.isspace() for c in atm.atm_id):
            raise ValueError(f"invalid atm id {atm.atm_id!r}")
        with self._lock:
            if atm.atm_id in self._atms:
                raise KeyError(f"duplicate atm id {atm.atm_id!r}")
            # copy-on-write so concurrent readers iterate a stable dict
            atms = dict(self._atms)
            atms[atm.atm_id] = atm
            self._atms = atms

    def get(self, atm_id: str) -> AtmRecord | None:
        return self._atms.get(atm_id)

    def __contains__(self, atm_id: object) -> bool:
        return atm_id in self._atms

    def __len__(self) -> int:
        return len(self._atms)

    def __iter__(self) -> Iterator[AtmRecord]:
        return iter(list(self._atms.values()))

    def nearest(self, user: GeoPoint, radius_m: float = DEFAULT_RADIUS_M) -> NearestResult | None:
        return nearest_atm(self._atms.values(), user, radius_m, self.distance)


def read_atm_csv(path: str | Path) -> list[AtmRecord]:
    """Parse an ``atmId,lat,lon`` seed file. Errors name the offending line."""
    records: list[AtmRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["atmId", "lat", "lon"]:
            raise ValueError(f"{path}:1: expected header atmId,lat,lon")
        for row in reader:
            line = reader.line_num
            try:
                atm_id = row["atmId"].strip()
                point = GeoPoint(float(row["lat"]), float(row["lon"]))
            except (TypeError, ValueError, AttributeError) as exc:
                raise ValueError(f"{path}:{line}: bad atm record: {exc}") from None
            if not atm_id:
                raise ValueError(f"{path}:{line}: empty atmId")
            if atm_id in seen:
                raise ValueError(f"{path}:{line}: duplicate atmId {atm_id!r}")
            seen.add(atm_id)
            records.append(AtmRecord(atm_id, point))
    return records
