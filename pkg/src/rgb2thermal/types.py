"""Shared domain types and value-range contracts.

Every image travelling between modules carries an explicit range tag so that
handing, say, a raw 8-bit tensor to code expecting [-1, 1] input is a
detectable contract violation rather than a silent scaling bug.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

RAW_0_255 = "raw_0_255"
UNIT_0_1 = "unit_0_1"
SIGNED_PM1 = "signed_pm1"

RANGE_BOUNDS = {
    RAW_0_255: (0.0, 255.0),
    UNIT_0_1: (0.0, 1.0),
    SIGNED_PM1: (-1.0, 1.0),
}

# Tolerance for float32 accumulation error at range edges.
_RANGE_EPS = 1e-5


class RangeTagError(ValueError):
    """An image with the wrong range tag crossed a module boundary."""


@dataclass(frozen=True)
class ImageTensor:
    """A [C, H, W] float image with a declared value range."""

    data: np.ndarray
    range_tag: str

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def violations(self) -> list[str]:
        out = []
        if self.range_tag not in RANGE_BOUNDS:
            return [f"unknown range_tag {self.range_tag!r}"]
        if self.data.ndim != 3:
            return [f"expected [C,H,W] array, got ndim={self.data.ndim}"]
        c, h, w = self.data.shape
        if c not in (1, 3):
            out.append(f"channel count {c} not in {{1, 3}}")
        if h <= 0 or w <= 0:
            out.append(f"non-positive spatial size {h}x{w}")
        lo, hi = RANGE_BOUNDS[self.range_tag]
        if self.data.size:
            dmin = float(self.data.min())
            dmax = float(self.data.max())
            if dmin < lo - _RANGE_EPS or dmax > hi + _RANGE_EPS:
                out.append(
                    f"values [{dmin:.6g}, {dmax:.6g}] outside {self.range_tag} "
                    f"interval [{lo:g}, {hi:g}]"
                )
        if not np.all(np.isfinite(self.data)):
            out.append("non-finite values present")
        return out


def require_range(img: ImageTensor, tag: str, who: str = "") -> ImageTensor:
    """Assert an image carries the expected range tag; raise otherwise."""
    if img.range_tag != tag:
        where = f" in {who}" if who else ""
        raise RangeTagError(
            f"expected range_tag {tag!r}{where}, got {img.range_tag!r}"
        )
    bad = img.violations()
    if bad:
        raise RangeTagError(f"image violates its own contract: {bad}")
    return img


def image_from_uint8(arr: np.ndarray) -> ImageTensor:
    """Wrap an 8-bit [C,H,W] or [H,W,C] array as a raw_0_255 tensor."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[None, :, :]
    elif a.ndim == 3 and a.shape[-1] in (1, 3) and a.shape[0] not in (1, 3):
        a = np.moveaxis(a, -1, 0)
    return ImageTensor(a.astype(np.float32), RAW_0_255)


@dataclass(frozen=True)
class MetadataRecord:
    """Weather and location context attached to one captured pair."""

    latitude: float
    longitude: float
    timestamp: datetime
    temperature: float
    relative_humidity: float
    wind_speed: float
    wind_direction: float
    solar_radiation: float
    cloud_cover: float

    def violations(self) -> list[str]:
        out = []
        if not -90.0 <= self.latitude <= 90.0:
            out.append("latitude out of [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            out.append("longitude out of [-180, 180]")
        if self.timestamp.tzinfo is None:
            out.append("timestamp is not timezone-aware (UTC required)")
        if not 0.0 <= self.relative_humidity <= 100.0:
            out.append("relative_humidity out of [0,100]")
        if not 0.0 <= self.cloud_cover <= 100.0:
            out.append("cloud_cover out of [0,100]")
        if not 0.0 <= self.wind_direction < 360.0:
            out.append("wind_direction out of [0,360)")
        if self.wind_speed < 0.0:
            out.append("wind_speed negative")
        if self.solar_radiation < 0.0:
            out.append("solar_radiation negative")
        for name in ("latitude", "longitude", "temperature", "relative_humidity",
                     "wind_speed", "wind_direction", "solar_radiation",
                     "cloud_cover"):
            if not math.isfinite(getattr(self, name)):
                out.append(f"{name} non-finite")
        return out

    def timestamp_utc(self) -> datetime:
        return self.timestamp.astimezone(timezone.utc)


@dataclass(frozen=True)
class PairedSample:
    """One RGB image, its thermal counterpart, metadata, and flight group."""

    sample_id: str
    rgb: ImageTensor
    thermal: ImageTensor
    metadata: MetadataRecord
    group_id: str


def validate_sample(sample: PairedSample, expected_size: int | None = None) -> list[str]:
    """Report every invariant violation; an empty list means well-formed.

    Validation never raises: callers decide whether a violation is fatal.
    """
    out = []
    if not sample.sample_id:
        out.append("sample_id empty")
    if not sample.group_id:
        out.append("group_id empty")
    out += [f"rgb: {v}" for v in sample.rgb.violations()]
    out += [f"thermal: {v}" for v in sample.thermal.violations()]
    if sample.rgb.channels != 3:
        out.append("rgb channel count != 3")
    if sample.thermal.channels != 1:
        out.append("thermal channel count != 1")
    if sample.thermal.range_tag != UNIT_0_1:
        out.append(f"thermal range_tag {sample.thermal.range_tag!r} != {UNIT_0_1!r}")
    if (sample.rgb.height, sample.rgb.width) != (sample.thermal.height, sample.thermal.width):
        out.append(
            f"thermal size mismatch: rgb {sample.rgb.height}x{sample.rgb.width} "
            f"vs thermal {sample.thermal.height}x{sample.thermal.width}"
        )
    if expected_size is not None:
        if (sample.rgb.height, sample.rgb.width) != (expected_size, expected_size):
            out.append(f"rgb size != {expected_size}x{expected_size}")
    out += sample.metadata.violations()
    return out


@dataclass
class MetricReport:
    """Per-sample and per-fold PSNR/SSIM/LPIPS aggregates."""

    fold_id: int
    per_sample: list[tuple[str, float, float, float]] = field(default_factory=list)

    @property
    def fold_mean(self) -> tuple[float, float, float]:
        if not self.per_sample:
            return (float("nan"),) * 3
        n = len(self.per_sample)
        return (
            sum(r[1] for r in self.per_sample) / n,
            sum(r[2] for r in self.per_sample) / n,
            sum(r[3] for r in self.per_sample) / n,
        )

    def violations(self) -> list[str]:
        out = []
        for sid, psnr_db, ssim, lpips in self.per_sample:
            if not (psnr_db > 0.0 or math.isinf(psnr_db)):
                out.append(f"{sid}: psnr_db must be > 0 or +inf, got {psnr_db}")
            if not -1.0 <= ssim <= 1.0 + 1e-9:
                out.append(f"{sid}: ssim {ssim} out of [-1, 1]")
            if lpips < 0.0:
                out.append(f"{sid}: lpips {lpips} negative")
        return out
