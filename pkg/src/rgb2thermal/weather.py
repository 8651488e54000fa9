"""Weather observation lookup: live Open-Meteo queries or recorded fixtures.

Fixture mode is the default everywhere tests run; live mode needs a network
and must be requested explicitly. Fixtures are one JSON document per
(lat rounded to 2dp, lon rounded to 2dp, ISO hour) key holding the six
weather fields.
"""

from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from pathlib import Path

import requests

from .types import MetadataRecord

ARCHIVE_URL = "https://archive-api.open-meteo.com/v1/archive"

HOURLY_FIELDS = [
    "temperature_2m",
    "relative_humidity_2m",
    "wind_speed_10m",
    "wind_direction_10m",
    "shortwave_radiation",
    "cloud_cover",
]

FIELD_TO_ATTR = {
    "temperature_2m": "temperature",
    "relative_humidity_2m": "relative_humidity",
    "wind_speed_10m": "wind_speed",
    "wind_direction_10m": "wind_direction",
    "shortwave_radiation": "solar_radiation",
    "cloud_cover": "cloud_cover",
}


class WeatherError(Exception):
    pass


class WeatherFetchError(WeatherError):
    """Network-level failure; safe to retry."""

    retryable = True


class FixtureMissError(WeatherError):
    pass


class WeatherParseError(WeatherError):
    """Malformed response; keeps the raw payload for debugging."""

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


def fixture_key(lat: float, lon: float, timestamp: datetime) -> str:
    ts = timestamp.astimezone(timezone.utc).replace(
        minute=0, second=0, microsecond=0
    )
    return f"{lat:.2f}_{lon:.2f}_{ts.strftime('%Y-%m-%dT%H')}"


def _record(lat: float, lon: float, timestamp: datetime, fields: dict) -> MetadataRecord:
    missing = [k for k in FIELD_TO_ATTR.values() if k not in fields]
    if missing:
        raise WeatherParseError(f"weather fields missing: {missing}", payload=fields)
    return MetadataRecord(
        latitude=lat,
        longitude=lon,
        timestamp=timestamp.astimezone(timezone.utc),
        temperature=float(fields["temperature"]),
        relative_humidity=float(fields["relative_humidity"]),
        wind_speed=float(fields["wind_speed"]),
        wind_direction=float(fields["wind_direction"]) % 360.0,
        solar_radiation=float(fields["solar_radiation"]),
        cloud_cover=float(fields["cloud_cover"]),
    )


class FixtureStore:
    """Directory of recorded hourly observations keyed by (lat, lon, hour)."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def path_for(self, lat: float, lon: float, timestamp: datetime) -> Path:
        return self.directory / f"{fixture_key(lat, lon, timestamp)}.json"

    def load(self, lat: float, lon: float, timestamp: datetime) -> dict:
        path = self.path_for(lat, lon, timestamp)
        if not path.exists():
            raise FixtureMissError(
                f"no weather fixture {path.name} under {self.directory}"
            )
        with open(path) as fh:
            return json.load(fh)

    def save(self, lat: float, lon: float, timestamp: datetime, fields: dict) -> Path:
        path = self.path_for(lat, lon, timestamp)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(fields, fh, indent=2, sort_keys=True)
        return path


def parse_hourly_payload(payload: dict, timestamp: datetime) -> dict:
    """Pick the observation nearest the timestamp from an hourly-arrays payload."""
    try:
        hourly = payload["hourly"]
        times = hourly["time"]
    except (KeyError, TypeError):
        raise WeatherParseError("payload has no hourly.time array", payload=payload)
    if not times:
        raise WeatherParseError("hourly.time array empty", payload=payload)
    target = timestamp.astimezone(timezone.utc)
    best_i, best_d = 0, math.inf
    for i, t in enumerate(times):
        ts = datetime.fromisoformat(t)
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc)
        d = abs((ts - target).total_seconds())
        if d < best_d:
            best_i, best_d = i, d
    fields = {}
    for api_name, attr in FIELD_TO_ATTR.items():
        try:
            value = hourly[api_name][best_i]
        except (KeyError, IndexError, TypeError):
            raise WeatherParseError(f"payload missing hourly {api_name}", payload=payload)
        if value is None:
            raise WeatherParseError(f"null {api_name} at selected hour", payload=payload)
        fields[attr] = float(value)
    return fields


def fetch_weather(
    lat: float,
    lon: float,
    timestamp: datetime,
    mode: str = "fixture",
    fixture_dir: Path | str | None = None,
    http_get=None,
    timeout: float = 20.0,
) -> MetadataRecord:
    """Return the nearest-hour observation for the six weather fields.

    mode="fixture" reads a recorded response keyed by (lat, lon, hour);
    mode="live" queries the Open-Meteo archive endpoint. ``http_get`` can
    replace ``requests.get`` (tests replay captured payloads through it).
    """
    if mode == "fixture":
        if fixture_dir is None:
            raise WeatherError("fixture mode requires fixture_dir")
        fields = FixtureStore(fixture_dir).load(lat, lon, timestamp)
        return _record(lat, lon, timestamp, fields)
    if mode != "live":
        raise WeatherError(f"unknown weather mode {mode!r}")

    day = timestamp.astimezone(timezone.utc).strftime("%Y-%m-%d")
    params = {
        "latitude": lat,
        "longitude": lon,
        "start_date": day,
        "end_date": day,
        "hourly": ",".join(HOURLY_FIELDS),
        "timezone": "UTC",
        "wind_speed_unit": "ms",
    }
    get = http_get or requests.get
    try:
        resp = get(ARCHIVE_URL, params=params, timeout=timeout)
        resp.raise_for_status()
        payload = resp.json()
    except (requests.RequestException, OSError) as exc:
        raise WeatherFetchError(f"open-meteo request failed (retryable): {exc}") from exc
    fields = parse_hourly_payload(payload, timestamp)
    return _record(lat, lon, timestamp, fields)
