"""Composite training objective: Charbonnier + (1 - MS-SSIM) + perceptual +
Sobel-gradient + statistics terms, with weights (1.0, 0.4, 0.3, 0.1, 0.05).

All terms accept [1,H,W] or [N,1,H,W] tensors in [0, 1] and reduce to a
scalar; everything except the perceptual term is defined here.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN/inf loss; the run must stop, not limp on."""


class SizeError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    charbonnier: float = 1.0
    msssim: float = 0.4
    lpips: float = 0.3
    grad: float = 0.1
    stats: float = 0.05

    def __post_init__(self):
        if any(w < 0 for w in self.as_tuple()):
            raise ValueError("loss weights must be non-negative")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.charbonnier, self.msssim, self.lpips, self.grad, self.stats)


@dataclass(frozen=True)
class LossBreakdown:
    charbonnier: float
    msssim_term: float
    lpips_term: float
    grad_term: float
    stats_term: float
    total: float


def _as_batched(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.dim() == 3 else x


def _check_pair(pred: torch.Tensor, target: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {list(pred.shape)} vs {list(target.shape)}")
    return _as_batched(pred), _as_batched(target)


def charbonnier(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Smooth-L1: mean over pixels of sqrt(diff^2 + eps^2)."""
    pred, target = _check_pair(pred, target)
    return torch.sqrt((pred - target) ** 2 + eps * eps).mean()


MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def gaussian_window(win_size: int, sigma: float, dtype=torch.float32, device=None) -> torch.Tensor:
    coords = torch.arange(win_size, dtype=dtype, device=device) - (win_size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _ssim_stats(
    x: torch.Tensor,
    y: torch.Tensor,
    win_size: int,
    sigma: float,
    data_range: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean SSIM and mean contrast-structure over the valid window region."""
    g = gaussian_window(win_size, sigma, dtype=x.dtype, device=x.device)
    kernel = torch.outer(g, g).view(1, 1, win_size, win_size)
    c = x.shape[1]
    kernel = kernel.repeat(c, 1, 1, 1)

    def filt(t):
        return F.conv2d(t, kernel, groups=c)

    mu_x, mu_y = filt(x), filt(y)
    sigma_x = filt(x * x) - mu_x ** 2
    sigma_y = filt(y * y) - mu_y ** 2
    sigma_xy = filt(x * y) - mu_x * mu_y
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    cs = (2 * sigma_xy + c2) / (sigma_x + sigma_y + c2)
    ssim_map = ((2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)) * cs
    return ssim_map.mean(), cs.mean()


def _fit_window(h: int, w: int) -> int:
    side = min(h, w)
    if side >= SSIM_WINDOW:
        return SSIM_WINDOW
    win = side if side % 2 == 1 else side - 1
    if win < 3:
        raise SizeError(f"image {h}x{w} too small for any SSIM window")
    return win


def ssim(
    pred: torch.Tensor,
    target: torch.Tensor,
    data_range: float = 1.0,
    win_size: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
) -> torch.Tensor:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1/K2 = .01/.03."""
    pred, target = _check_pair(pred, target)
    if min(pred.shape[-2:]) < win_size:
        raise SizeError(f"image smaller than the {win_size}x{win_size} SSIM window")
    value, _ = _ssim_stats(pred, target, win_size, sigma, data_range)
    return value


def _halve(x: torch.Tensor) -> torch.Tensor:
    pad_h = x.shape[-2] % 2
    pad_w = x.shape[-1] % 2
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
    return F.avg_pool2d(x, kernel_size=2)


def ms_ssim_scale_count(h: int, w: int, win_size: int) -> int:
    """Scales usable before ceil-halving drops below the window size."""
    side = min(h, w)
    scales = 0
    while side >= win_size and scales < len(MS_SSIM_WEIGHTS):
        scales += 1
        side = (side + 1) // 2
    return scales


def ms_ssim(pred: torch.Tensor, target: torch.Tensor, data_range: float = 1.0) -> torch.Tensor:
    """Multi-scale SSIM with standard per-scale weights.

    The scale count adapts to image size (five scales needs min side >= 161);
    truncated weights are renormalized. Below an 11-pixel side the window
    shrinks to the largest odd fit (single scale) so tiny unit-test inputs
    remain valid.
    """
    pred, target = _check_pair(pred, target)
    h, w = pred.shape[-2:]
    win = _fit_window(h, w)
    n_scales = ms_ssim_scale_count(h, w, win)
    weights = torch.tensor(MS_SSIM_WEIGHTS[:n_scales], dtype=pred.dtype, device=pred.device)
    weights = weights / weights.sum()
    result = torch.ones((), dtype=pred.dtype, device=pred.device)
    x, y = pred, target
    for i in range(n_scales):
        ssim_mean, cs_mean = _ssim_stats(x, y, win, SSIM_SIGMA, data_range)
        term = ssim_mean if i == n_scales - 1 else cs_mean
        result = result * torch.clamp(term, min=0.0) ** weights[i]
        if i < n_scales - 1:
            x, y = _halve(x), _halve(y)
    return result


def msssim_term(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return 1.0 - ms_ssim(pred, target)


_SOBEL_X = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]


def sobel_gradients(img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """3x3 Sobel x/y responses with reflect padding; shape-preserving."""
    img = _as_batched(img)
    if min(img.shape[-2:]) < 3:
        raise SizeError("Sobel gradients need at least a 3x3 image")
    kx = torch.tensor(_SOBEL_X, dtype=img.dtype, device=img.device).view(1, 1, 3, 3)
    ky = kx.transpose(-1, -2)
    c = img.shape[1]
    padded = F.pad(img, (1, 1, 1, 1), mode="reflect")
    gx = F.conv2d(padded, kx.repeat(c, 1, 1, 1), groups=c)
    gy = F.conv2d(padded, ky.repeat(c, 1, 1, 1), groups=c)
    return gx, gy


def grad_term(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """L1 distance between Sobel responses, averaged over both directions."""
    pred, target = _check_pair(pred, target)
    gx_p, gy_p = sobel_gradients(pred)
    gx_t, gy_t = sobel_gradients(target)
    return 0.5 * ((gx_p - gx_t).abs().mean() + (gy_p - gy_t).abs().mean())


def stats_term(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """|mean difference| + |std difference|, per sample, averaged over batch."""
    pred, target = _check_pair(pred, target)
    n = pred.shape[0]
    p = pred.reshape(n, -1)
    t = target.reshape(n, -1)
    mean_gap = (p.mean(dim=1) - t.mean(dim=1)).abs()
    std_gap = (p.std(dim=1, unbiased=False) - t.std(dim=1, unbiased=False)).abs()
    return (mean_gap + std_gap).mean()


def combined_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    weights: LossWeights | None = None,
    lpips_fn=None,
    charbonnier_eps: float = 1e-3,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted sum of all five terms; returns the differentiable total and
    a float breakdown for logging."""
    w = weights or LossWeights()
    charb = charbonnier(pred, target, charbonnier_eps)
    ms = msssim_term(pred, target)
    gr = grad_term(pred, target)
    st = stats_term(pred, target)
    if w.lpips > 0:
        if lpips_fn is None:
            raise ValueError("lpips weight > 0 requires a perceptual distance")
        lp = lpips_fn(_as_batched(pred), _as_batched(target)).mean()
    else:
        lp = torch.zeros((), dtype=pred.dtype, device=pred.device)
    total = (
        w.charbonnier * charb
        + w.msssim * ms
        + w.lpips * lp
        + w.grad * gr
        + w.stats * st
    )
    return total, LossBreakdown(
        charbonnier=float(charb.detach()),
        msssim_term=float(ms.detach()),
        lpips_term=float(lp.detach()),
        grad_term=float(gr.detach()),
        stats_term=float(st.detach()),
        total=float(total.detach()),
    )
