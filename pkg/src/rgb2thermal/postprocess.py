"""Post-prediction smoothing and visualization: small Gaussian blur,
percentile normalization, and color-table rendering.

The 256-entry color tables are bundled as CSV data files so rendering has no
plotting-library dependency.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import convolve1d

from .types import RAW_0_255, UNIT_0_1, ImageTensor, require_range


@dataclass(frozen=True)
class RenderConfig:
    blur_sigma: float = 0.5
    norm_lo: float = 1.0
    norm_hi: float = 99.0
    colormap: str = "inferno"

    def __post_init__(self):
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")
        if not self.norm_lo < self.norm_hi:
            raise ValueError("need norm_lo < norm_hi")


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized kernel with radius ceil(4*sigma); >99.99% of the mass."""
    radius = math.ceil(4.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(pred: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with reflect padding; sigma 0 is identity."""
    arr = np.asarray(pred, dtype=np.float32)
    if sigma == 0.0:
        return arr.copy()
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    kernel = gaussian_kernel1d(sigma)
    out = convolve1d(arr.astype(np.float64), kernel, axis=-1, mode="reflect")
    out = convolve1d(out, kernel, axis=-2, mode="reflect")
    return out.astype(np.float32)


def percentile_normalize(pred: np.ndarray, lo: float = 1.0, hi: float = 99.0) -> np.ndarray:
    """Clip to the lo/hi percentiles and rescale that span to [0, 1]."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    arr = np.asarray(pred, dtype=np.float32)
    p_lo, p_hi = np.percentile(arr, [lo, hi])
    if p_hi == p_lo:
        return np.full_like(arr, 0.5)
    return np.clip((arr - p_lo) / (p_hi - p_lo), 0.0, 1.0).astype(np.float32)


class ColormapError(ValueError):
    pass


_AVAILABLE_MAPS = ("inferno",)


def load_colormap(map_id: str) -> np.ndarray:
    """Bundled 256x3 RGB lookup table for the named map, values in [0, 1]."""
    if map_id not in _AVAILABLE_MAPS:
        raise ColormapError(
            f"unknown colormap {map_id!r}; available: {', '.join(_AVAILABLE_MAPS)}"
        )
    ref = resources.files("rgb2thermal") / "_data" / f"{map_id}_256.csv"
    with ref.open() as fh:
        rows = list(csv.DictReader(fh))
    table = np.array([[float(r["r"]), float(r["g"]), float(r["b"])] for r in rows])
    if table.shape != (256, 3):
        raise ColormapError(f"colormap table for {map_id!r} is malformed")
    return table


def render_colormap(pred: np.ndarray, map_id: str = "inferno") -> ImageTensor:
    """Map a [0,1] single-channel image through a 256-entry color table.

    Fractional positions interpolate linearly between adjacent entries.
    """
    table = load_colormap(map_id)
    arr = np.asarray(pred, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[0]
    pos = np.clip(arr, 0.0, 1.0) * 255.0
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, 255)
    frac = (pos - lo)[..., None]
    rgb = table[lo] * (1.0 - frac) + table[hi] * frac
    return ImageTensor(np.moveaxis(rgb, -1, 0) * 255.0, RAW_0_255)


def postprocess(pred: ImageTensor, cfg: RenderConfig | None = None) -> ImageTensor:
    """Blur only: the evaluation-side smoothing applied before metrics."""
    cfg = cfg or RenderConfig()
    require_range(pred, UNIT_0_1, "postprocess")
    blurred = np.clip(gaussian_blur(pred.data, cfg.blur_sigma), 0.0, 1.0)
    return ImageTensor(blurred, UNIT_0_1)


def render_thermal(pred: ImageTensor, cfg: RenderConfig | None = None) -> ImageTensor:
    """Full visualization chain: blur, percentile-normalize, colormap."""
    cfg = cfg or RenderConfig()
    require_range(pred, UNIT_0_1, "render_thermal")
    blurred = gaussian_blur(pred.data, cfg.blur_sigma)
    normed = percentile_normalize(blurred, cfg.norm_lo, cfg.norm_hi)
    return render_colormap(normed, cfg.colormap)


def save_triptych(rgb: ImageTensor, pred_render: ImageTensor,
                  gt_render: ImageTensor, path: Path) -> None:
    """RGB input | predicted render | ground-truth render, side by side."""
    require_range(rgb, RAW_0_255, "save_triptych")
    panels = []
    for img in (rgb, pred_render, gt_render):
        arr = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
        if arr.shape[0] == 1:
            arr = np.repeat(arr, 3, axis=0)
        panels.append(np.moveaxis(arr, 0, -1))
    h = max(p.shape[0] for p in panels)
    padded = []
    for p in panels:
        if p.shape[0] < h:
            pad = np.zeros((h - p.shape[0], p.shape[1], 3), dtype=np.uint8)
            p = np.concatenate([p, pad], axis=0)
        padded.append(p)
    strip = np.concatenate(padded, axis=1)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(strip, mode="RGB").save(path)
