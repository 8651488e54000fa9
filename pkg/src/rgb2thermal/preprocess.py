"""Deterministic RGB input conditioning: letterbox to a square canvas,
HSV saturation boost, percentile contrast stretch, [-1, 1] normalization.

All stages are pure functions on [C, H, W] float arrays. The contrast
stretch computes its percentiles over the letterbox content region only, so
black padding bands never skew the low percentile.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .types import (
    RAW_0_255,
    SIGNED_PM1,
    UNIT_0_1,
    ImageTensor,
    require_range,
)


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 384
    saturation_factor: float = 1.3
    stretch_lo: float = 1.0
    stretch_hi: float = 99.0

    def __post_init__(self):
        if self.target_size <= 0:
            raise ValueError("target_size must be positive")
        if self.saturation_factor <= 0:
            raise ValueError("saturation_factor must be positive")
        if not 0.0 <= self.stretch_lo < self.stretch_hi <= 100.0:
            raise ValueError("need 0 <= stretch_lo < stretch_hi <= 100")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class LetterboxGeometry:
    """Placement of the resized content inside the square canvas."""

    scale: float
    content_h: int
    content_w: int
    top: int
    left: int

    @property
    def box(self) -> tuple[int, int, int, int]:
        return (self.top, self.left, self.content_h, self.content_w)


def letterbox_geometry(h: int, w: int, target: int) -> LetterboxGeometry:
    scale = target / max(h, w)
    content_h = int(round(h * scale))
    content_w = int(round(w * scale))
    top = (target - content_h) // 2
    left = (target - content_w) // 2
    return LetterboxGeometry(scale, content_h, content_w, top, left)


def _resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-channel bilinear resize of a [C, H, W] float array."""
    out = np.empty((arr.shape[0], out_h, out_w), dtype=np.float32)
    for c in range(arr.shape[0]):
        im = Image.fromarray(arr[c].astype(np.float32), mode="F")
        out[c] = np.asarray(im.resize((out_w, out_h), resample=Image.BILINEAR))
    return out


def letterbox(img: ImageTensor, target: int) -> ImageTensor:
    """Aspect-preserving resize into a target x target canvas, zero padding.

    The shorter axis is centered; an odd pixel remainder goes to the
    bottom/right band. The range tag passes through unchanged.
    """
    c, h, w = img.data.shape
    geom = letterbox_geometry(h, w, target)
    if (h, w) == (target, target):
        return ImageTensor(img.data.copy(), img.range_tag)
    content = _resize_bilinear(img.data, geom.content_h, geom.content_w)
    lo, hi = {RAW_0_255: (0.0, 255.0), UNIT_0_1: (0.0, 1.0), SIGNED_PM1: (-1.0, 1.0)}[img.range_tag]
    content = np.clip(content, lo, hi)
    canvas = np.zeros((c, target, target), dtype=np.float32)
    canvas[:, geom.top:geom.top + geom.content_h, geom.left:geom.left + geom.content_w] = content
    return ImageTensor(canvas, img.range_tag)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """[3,H,W] RGB in [0,1] -> HSV with H as a fraction of a full turn."""
    r, g, b = rgb[0], rgb[1], rgb[2]
    maxc = np.max(rgb, axis=0)
    minc = np.min(rgb, axis=0)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v])


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[0], hsv[1], hsv[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def saturation_boost(img: ImageTensor, factor: float) -> ImageTensor:
    """Scale HSV saturation by ``factor``; hue and value stay untouched."""
    require_range(img, RAW_0_255, "saturation_boost")
    if img.channels != 3:
        raise ValueError(f"saturation boost needs 3 channels, got {img.channels}")
    hsv = rgb_to_hsv(img.data / 255.0)
    hsv[1] = np.clip(hsv[1] * factor, 0.0, 1.0)
    out = hsv_to_rgb(hsv) * 255.0
    return ImageTensor(np.clip(out, 0.0, 255.0), RAW_0_255)


# A channel narrower than one 8-bit intensity level has no contrast to
# stretch; mapping it would only amplify quantization noise.
DEGENERATE_RANGE = 1.0


def contrast_stretch(
    img: ImageTensor,
    lo: float,
    hi: float,
    content_box: tuple[int, int, int, int] | None = None,
) -> ImageTensor:
    """Linear per-channel histogram stretch between the lo/hi percentiles.

    ``content_box`` (top, left, h, w) restricts the percentile computation,
    e.g. to the letterbox content region; the affine map still applies to
    the whole channel.
    """
    require_range(img, RAW_0_255, "contrast_stretch")
    if not lo < hi:
        raise ValueError("stretch needs lo < hi")
    data = img.data
    if content_box is not None:
        top, left, h, w = content_box
        region = data[:, top:top + h, left:left + w]
    else:
        region = data
    out = np.empty_like(data)
    for c in range(data.shape[0]):
        p_lo, p_hi = np.percentile(region[c], [lo, hi])
        if p_hi - p_lo < DEGENERATE_RANGE:
            out[c] = data[c]
        else:
            out[c] = np.clip((data[c] - p_lo) * (255.0 / (p_hi - p_lo)), 0.0, 255.0)
    return ImageTensor(out, RAW_0_255)


def normalize_to_pm1(img: ImageTensor) -> ImageTensor:
    require_range(img, RAW_0_255, "normalize_to_pm1")
    return ImageTensor(img.data / 127.5 - 1.0, SIGNED_PM1)


def quantize_levels(img: ImageTensor) -> ImageTensor:
    """Round to whole 8-bit intensity levels (the on-disk representation)."""
    require_range(img, RAW_0_255, "quantize_levels")
    return ImageTensor(np.rint(img.data), RAW_0_255)


def preprocess_rgb_stages(img: ImageTensor, cfg: PreprocessConfig) -> ImageTensor:
    """Letterbox -> saturation boost -> contrast stretch, quantized to 8-bit.

    This is the stage written to disk by the preprocess command; model input
    additionally passes through :func:`normalize_to_pm1`.
    """
    require_range(img, RAW_0_255, "preprocess")
    geom = letterbox_geometry(img.height, img.width, cfg.target_size)
    stage = letterbox(img, cfg.target_size)
    stage = saturation_boost(stage, cfg.saturation_factor)
    stage = contrast_stretch(stage, cfg.stretch_lo, cfg.stretch_hi, content_box=geom.box)
    return quantize_levels(stage)


def preprocess_pipeline(img: ImageTensor, cfg: PreprocessConfig) -> ImageTensor:
    """Full deterministic RGB pipeline producing signed [-1, 1] model input."""
    return normalize_to_pm1(preprocess_rgb_stages(img, cfg))


def preprocess_thermal(img: ImageTensor, cfg: PreprocessConfig) -> ImageTensor:
    """Letterbox the thermal target with identical geometry; scale to [0,1].

    Thermal maps get no saturation/contrast/[-1,1] treatment: those stages
    condition the RGB input only.
    """
    if img.range_tag == RAW_0_255:
        img = ImageTensor(img.data / 255.0, UNIT_0_1)
    require_range(img, UNIT_0_1, "preprocess_thermal")
    return letterbox(img, cfg.target_size)


MANIFEST_NAME = "preprocess_manifest.json"


def write_preprocess_manifest(out_dir: Path, cfg: PreprocessConfig, source: str, sample_ids: list[str]) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    doc = {
        "config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "source": source,
        "sample_ids": sorted(sample_ids),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    tmp.replace(path)
    return path


def read_preprocess_manifest(directory: Path) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(
            f"{directory} has no {MANIFEST_NAME}; run the preprocess command first"
        )
    with open(path) as fh:
        return json.load(fh)
