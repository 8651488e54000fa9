"""Aerial RGB-to-thermal image translation: metadata-conditioned U-Net,
Pix2Pix comparison variant, deterministic pre/post-processing, composite
loss, grouped cross-validation, and PSNR/SSIM/LPIPS evaluation."""

__version__ = "0.1.0"

from .types import (  # noqa: F401
    ImageTensor,
    MetadataRecord,
    MetricReport,
    PairedSample,
    validate_sample,
)
