"""Location-aware single-use password service."""

from .geo import AtmRecord, AtmRegistry, GeoPoint, NearestResult, haversine_m, nearest_atm
from .otpcore import (
    Password,
    floor_to_minute,
    generate_password,
    generate_pin,
    generate_unique_password,
    pin_for_now,
    sha512_hex,
    validate_pin,
)
from .store import LappStore, UserRecord
from .wire import GetPassRequest, Response, ResponseMode

__all__ = [
    "AtmRecord",
    "AtmRegistry",
    "GeoPoint",
    "GetPassRequest",
    "LappStore",
    "NearestResult",
    "Password",
    "Response",
    "ResponseMode",
    "UserRecord",
    "floor_to_minute",
    "generate_password",
    "generate_pin",
    "generate_unique_password",
    "haversine_m",
    "nearest_atm",
    "pin_for_now",
    "sha512_hex",
    "validate_pin",
]
