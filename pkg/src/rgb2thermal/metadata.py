"""Conditioning features: the 15-slot weather/location vector and its
per-fold standardization.

Slot layout (version ``mdv1``):

    0  latitude                 8  cloud_cover
    1  longitude                9  time_of_day_sin
    2  temperature             10  time_of_day_cos
    3  relative_humidity       11  day_of_year_sin
    4  wind_speed              12  day_of_year_cos
    5  wind_dir_sin            13  solar_elevation_proxy (time_cos * doy_cos)
    6  wind_dir_cos            14  is_daylight (solar_radiation > 10 W/m^2)

Cyclical quantities use (sin, cos) pairs so distances stay continuous across
the wrap point (midnight, due-north bearing, new year).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .types import MetadataRecord

LAYOUT_VERSION = "mdv1"
FEATURE_DIM = 15

SLOT_NAMES = [
    "latitude", "longitude", "temperature", "relative_humidity", "wind_speed",
    "wind_dir_sin", "wind_dir_cos", "solar_radiation", "cloud_cover",
    "time_of_day_sin", "time_of_day_cos", "day_of_year_sin", "day_of_year_cos",
    "solar_elevation_proxy", "is_daylight",
]

DAYLIGHT_THRESHOLD_WM2 = 10.0


class IngestionError(ValueError):
    pass


class StandardizerError(ValueError):
    pass


@dataclass(frozen=True)
class MetadataVector:
    values: np.ndarray
    layout_version: str = LAYOUT_VERSION

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (FEATURE_DIM,):
            raise IngestionError(f"feature vector must have length {FEATURE_DIM}, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def violations(self) -> list[str]:
        """Check the cyclical-pair identity (pre-standardization only)."""
        out = []
        for name, (i, j) in {"wind": (5, 6), "time": (9, 10), "doy": (11, 12)}.items():
            norm = self.values[i] ** 2 + self.values[j] ** 2
            if abs(norm - 1.0) > 1e-6:
                out.append(f"{name} sin^2+cos^2 = {norm:.8f} != 1")
        return out


def encode_time_of_day(timestamp: datetime) -> tuple[float, float]:
    """(sin, cos) of 2*pi*t/86400 with t = seconds since local midnight."""
    t = timestamp.hour * 3600 + timestamp.minute * 60 + timestamp.second + timestamp.microsecond / 1e6
    angle = 2.0 * math.pi * t / 86400.0
    return math.sin(angle), math.cos(angle)


def encode_day_of_year(timestamp: datetime) -> tuple[float, float]:
    angle = 2.0 * math.pi * (timestamp.timetuple().tm_yday - 1) / 365.25
    return math.sin(angle), math.cos(angle)


def encode_wind_direction(deg: float) -> tuple[float, float]:
    if not 0.0 <= deg < 360.0:
        raise IngestionError(f"wind direction {deg} out of [0, 360)")
    rad = math.radians(deg)
    return math.sin(rad), math.cos(rad)


def build_feature_vector(record: MetadataRecord, utc_offset_hours: float = 0.0) -> MetadataVector:
    """Expand a metadata record into the fixed 15-slot conditioning vector.

    ``utc_offset_hours`` shifts the stored UTC timestamp into local time for
    the time-of-day and day-of-year encodings; no other timezone inference
    is attempted.
    """
    bad = record.violations()
    if bad:
        raise IngestionError(f"metadata record invalid: {bad}")
    local = record.timestamp_utc() + timedelta(hours=utc_offset_hours)
    tod_sin, tod_cos = encode_time_of_day(local)
    doy_sin, doy_cos = encode_day_of_year(local)
    wd_sin, wd_cos = encode_wind_direction(record.wind_direction)
    values = np.array(
        [
            record.latitude,
            record.longitude,
            record.temperature,
            record.relative_humidity,
            record.wind_speed,
            wd_sin,
            wd_cos,
            record.solar_radiation,
            record.cloud_cover,
            tod_sin,
            tod_cos,
            doy_sin,
            doy_cos,
            tod_cos * doy_cos,
            1.0 if record.solar_radiation > DAYLIGHT_THRESHOLD_WM2 else 0.0,
        ],
        dtype=np.float64,
    )
    return MetadataVector(values)


STD_CLAMP = 1e-6


@dataclass(frozen=True)
class Standardizer:
    """Per-slot (x - mean) / std transform, fitted on one training fold."""

    mean: np.ndarray
    std: np.ndarray
    fitted_on_fold: int

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64)
        s = np.asarray(self.std, dtype=np.float64)
        if m.shape != (FEATURE_DIM,) or s.shape != (FEATURE_DIM,):
            raise StandardizerError("mean/std must have length 15")
        m.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)


def fit_standardizer(vectors: list[MetadataVector], fold: int) -> Standardizer:
    """Population mean/std per slot; std clamped below at 1e-6.

    The clamp keeps constant features (single-flight folds have constant
    lat/lon) from blowing up the division.
    """
    if len(vectors) < 2:
        raise StandardizerError(f"need >= 2 vectors to fit, got {len(vectors)}")
    stack = np.stack([v.values for v in vectors])
    mean = stack.mean(axis=0)
    std = np.maximum(stack.std(axis=0), STD_CLAMP)
    return Standardizer(mean=mean, std=std, fitted_on_fold=fold)


def apply_standardizer(v: MetadataVector, s: Standardizer) -> MetadataVector:
    return MetadataVector((v.values - s.mean) / s.std, layout_version=v.layout_version)


def invert_standardizer(v: MetadataVector, s: Standardizer) -> MetadataVector:
    return MetadataVector(v.values * s.std + s.mean, layout_version=v.layout_version)
