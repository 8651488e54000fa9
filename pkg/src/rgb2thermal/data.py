"""On-disk dataset layout: ``<root>/rgb/<id>.png``, ``<root>/thermal/<id>.png``,
plus ``metadata.csv`` with one row per sample.

Images are stored 8-bit (RGB and single-channel grayscale); all in-memory
math is float32. A write/read round trip is field-for-field identical.
"""

from __future__ import annotations

import csv
from datetime import datetime
from pathlib import Path

import numpy as np
from PIL import Image

from .types import (
    RAW_0_255,
    UNIT_0_1,
    ImageTensor,
    MetadataRecord,
    PairedSample,
    image_from_uint8,
)

METADATA_COLUMNS = [
    "sample_id",
    "group_id",
    "latitude",
    "longitude",
    "timestamp_iso8601",
    "temperature_c",
    "relative_humidity_pct",
    "wind_speed_ms",
    "wind_direction_deg",
    "solar_radiation_wm2",
    "cloud_cover_pct",
]


class DatasetLayoutError(ValueError):
    pass


def rgb_path(root: Path, sample_id: str) -> Path:
    return Path(root) / "rgb" / f"{sample_id}.png"


def thermal_path(root: Path, sample_id: str) -> Path:
    return Path(root) / "thermal" / f"{sample_id}.png"


def metadata_path(root: Path) -> Path:
    return Path(root) / "metadata.csv"


def save_image(img: ImageTensor, path: Path) -> None:
    """Write an image as 8-bit PNG (grayscale for C=1, RGB for C=3)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = img.data
    if img.range_tag == UNIT_0_1:
        arr = arr * 255.0
    elif img.range_tag != RAW_0_255:
        raise DatasetLayoutError(f"cannot store {img.range_tag} images as 8-bit PNG")
    u8 = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    if u8.shape[0] == 1:
        Image.fromarray(u8[0], mode="L").save(path)
    else:
        Image.fromarray(np.moveaxis(u8, 0, -1), mode="RGB").save(path)


def load_rgb(path: Path) -> ImageTensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return image_from_uint8(arr)


def load_thermal(path: Path) -> ImageTensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32)
    return ImageTensor(arr[None] / 255.0, UNIT_0_1)


def metadata_to_row(sample_id: str, group_id: str, rec: MetadataRecord) -> list[str]:
    return [
        sample_id,
        group_id,
        repr(float(rec.latitude)),
        repr(float(rec.longitude)),
        rec.timestamp_utc().isoformat(),
        repr(float(rec.temperature)),
        repr(float(rec.relative_humidity)),
        repr(float(rec.wind_speed)),
        repr(float(rec.wind_direction)),
        repr(float(rec.solar_radiation)),
        repr(float(rec.cloud_cover)),
    ]


def row_to_metadata(row: dict[str, str]) -> tuple[str, str, MetadataRecord]:
    missing = [c for c in METADATA_COLUMNS if c not in row or row[c] in (None, "")]
    if missing:
        raise DatasetLayoutError(f"metadata row missing fields: {missing}")
    rec = MetadataRecord(
        latitude=float(row["latitude"]),
        longitude=float(row["longitude"]),
        timestamp=datetime.fromisoformat(row["timestamp_iso8601"]),
        temperature=float(row["temperature_c"]),
        relative_humidity=float(row["relative_humidity_pct"]),
        wind_speed=float(row["wind_speed_ms"]),
        wind_direction=float(row["wind_direction_deg"]),
        solar_radiation=float(row["solar_radiation_wm2"]),
        cloud_cover=float(row["cloud_cover_pct"]),
    )
    return row["sample_id"], row["group_id"], rec


def write_metadata_csv(root: Path, rows: list[list[str]]) -> None:
    """Write rows (already in column order) sorted by sample_id."""
    path = metadata_path(root)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(rows, key=lambda r: r[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METADATA_COLUMNS)
        writer.writerows(rows)


def read_metadata_csv(root: Path) -> list[dict[str, str]]:
    path = metadata_path(root)
    if not path.exists():
        raise DatasetLayoutError(f"no metadata.csv under {root}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METADATA_COLUMNS:
            raise DatasetLayoutError(
                f"metadata.csv columns {reader.fieldnames} != {METADATA_COLUMNS}"
            )
        return list(reader)


def save_sample(root: Path, sample: PairedSample) -> None:
    root = Path(root)
    save_image(sample.rgb, rgb_path(root, sample.sample_id))
    save_image(sample.thermal, thermal_path(root, sample.sample_id))


def write_dataset(root: Path, samples: list[PairedSample]) -> None:
    root = Path(root)
    rows = []
    for s in samples:
        save_sample(root, s)
        rows.append(metadata_to_row(s.sample_id, s.group_id, s.metadata))
    write_metadata_csv(root, rows)


def load_dataset(root: Path) -> list[PairedSample]:
    """Load every sample listed in metadata.csv; missing files raise."""
    root = Path(root)
    samples = []
    for row in read_metadata_csv(root):
        sid, gid, rec = row_to_metadata(row)
        rp, tp = rgb_path(root, sid), thermal_path(root, sid)
        if not rp.exists():
            raise DatasetLayoutError(f"missing rgb image {rp}")
        if not tp.exists():
            raise DatasetLayoutError(f"missing thermal image {tp}")
        samples.append(
            PairedSample(
                sample_id=sid,
                rgb=load_rgb(rp),
                thermal=load_thermal(tp),
                metadata=rec,
                group_id=gid,
            )
        )
    return samples
