"""Shared synthetic-data builders for the test suite."""

from __future__ import annotations

import csv
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from rgb2thermal.data import write_dataset
from rgb2thermal.preprocess import PreprocessConfig, write_preprocess_manifest
from rgb2thermal.types import (
    RAW_0_255,
    UNIT_0_1,
    ImageTensor,
    MetadataRecord,
    PairedSample,
)
from rgb2thermal.weather import FixtureStore

BASE_TIME = datetime(2024, 6, 21, 15, 0, tzinfo=timezone.utc)


def smooth_field(size: int, seed: int, octaves: int = 3) -> np.ndarray:
    """Blobby [0,1] field: sums of coarse random grids, bilinearly upsampled."""
    rng = np.random.default_rng(seed)
    field = np.zeros((size, size))
    for o in range(octaves):
        n = 2 ** (o + 2)
        coarse = rng.random((n, n))
        ys = np.linspace(0, n - 1, size)
        xs = np.linspace(0, n - 1, size)
        yi = np.minimum(ys.astype(int), n - 2)
        xi = np.minimum(xs.astype(int), n - 2)
        fy = (ys - yi)[:, None]
        fx = (xs - xi)[None, :]
        tl = coarse[np.ix_(yi, xi)]
        tr = coarse[np.ix_(yi, xi + 1)]
        bl = coarse[np.ix_(yi + 1, xi)]
        br = coarse[np.ix_(yi + 1, xi + 1)]
        field += (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx
                  + bl * fy * (1 - fx) + br * fy * fx) / (o + 1)
    field -= field.min()
    return field / max(field.max(), 1e-9)


def make_rgb(size: int = 64, seed: int = 0, height: int | None = None) -> ImageTensor:
    h = height or size
    rng = np.random.default_rng(seed)
    base = smooth_field(max(h, size), seed)[:h, :size]
    channels = np.stack([
        np.clip(base * rng.uniform(0.5, 1.0) + rng.uniform(0, 0.3), 0, 1)
        for _ in range(3)
    ])
    return ImageTensor(channels * 255.0, RAW_0_255)


def make_thermal_from_rgb(rgb: ImageTensor, invert: bool = False) -> ImageTensor:
    gray = rgb.data.mean(axis=0, keepdims=True) / 255.0
    t = 0.15 + 0.5 * gray
    if invert:
        t = 1.0 - t
    return ImageTensor(np.clip(t, 0, 1), UNIT_0_1)


def make_record(
    temperature: float = 20.0,
    solar: float = 600.0,
    hour: int = 15,
    wind_direction: float = 270.0,
    **kw,
) -> MetadataRecord:
    defaults = dict(
        latitude=42.3,
        longitude=-83.0,
        timestamp=BASE_TIME.replace(hour=hour),
        temperature=temperature,
        relative_humidity=50.0,
        wind_speed=3.0,
        wind_direction=wind_direction,
        solar_radiation=solar,
        cloud_cover=25.0,
    )
    defaults.update(kw)
    return MetadataRecord(**defaults)


def make_sample(
    sample_id: str = "s0",
    group_id: str = "g0",
    size: int = 64,
    seed: int = 0,
    record: MetadataRecord | None = None,
    invert_thermal: bool = False,
) -> PairedSample:
    rgb = make_rgb(size, seed)
    return PairedSample(
        sample_id=sample_id,
        rgb=rgb,
        thermal=make_thermal_from_rgb(rgb, invert_thermal),
        metadata=record or make_record(),
        group_id=group_id,
    )


def make_samples(n: int, n_groups: int, size: int = 64, seed: int = 0) -> list[PairedSample]:
    samples = []
    for i in range(n):
        group = f"flight{i % n_groups}"
        record = make_record(
            temperature=10.0 + (i % 7) * 3.0,
            solar=100.0 + (i % 5) * 150.0,
            hour=8 + (i % 10),
            wind_direction=(i * 37.0) % 360.0,
        )
        samples.append(
            make_sample(f"s{i:03d}", group, size=size, seed=seed + i, record=record)
        )
    return samples


def build_processed_dataset(root: Path, samples: list[PairedSample],
                            cfg: PreprocessConfig | None = None) -> PreprocessConfig:
    """Write samples as an already-preprocessed dataset directory.

    The samples must already be square at cfg.target_size; this just adds
    the manifest that training/evaluation expect.
    """
    cfg = cfg or PreprocessConfig(target_size=samples[0].rgb.height)
    write_dataset(root, samples)
    write_preprocess_manifest(root, cfg, "synthetic", [s.sample_id for s in samples])
    return cfg


def build_raw_inputs(root: Path, n: int = 20, n_groups: int = 5,
                     size: tuple[int, int] = (96, 128)) -> dict:
    """Raw ingest inputs: rgb/ + thermal/ pngs, records.csv, weather fixtures."""
    from rgb2thermal.data import save_image

    root = Path(root)
    h, w = size
    store = FixtureStore(root / "fixtures")
    rows = []
    for i in range(n):
        sid = f"img{i:03d}"
        rng = np.random.default_rng(1000 + i)
        rgb = ImageTensor(
            np.stack([smooth_field(max(h, w), 1000 + i + c)[:h, :w] for c in range(3)]) * 255.0,
            RAW_0_255,
        )
        thermal = ImageTensor(rgb.data.mean(axis=0, keepdims=True) / 255.0, UNIT_0_1)
        save_image(rgb, root / "rgb" / f"{sid}.png")
        save_image(thermal, root / "thermal" / f"{sid}.png")
        lat = 42.3 + (i % n_groups) * 0.01
        lon = -83.0 - (i % n_groups) * 0.01
        ts = BASE_TIME + timedelta(hours=i % 8)
        store.save(lat, lon, ts, {
            "temperature": 18.0 + i,
            "relative_humidity": 40.0 + (i % 30),
            "wind_speed": 2.0 + (i % 4),
            "wind_direction": float((i * 40) % 360),
            "solar_radiation": 500.0 + 10 * i,
            "cloud_cover": float((i * 7) % 100),
        })
        rows.append([sid, f"flight{i % n_groups}", repr(lat), repr(lon), ts.isoformat()])
    records = root / "records.csv"
    with open(records, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "group_id", "latitude", "longitude", "timestamp_iso8601"])
        writer.writerows(rows)
    return {
        "rgb_dir": root / "rgb",
        "thermal_dir": root / "thermal",
        "records": records,
        "fixture_dir": root / "fixtures",
    }
