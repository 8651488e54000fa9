"""Four-level conditional U-Net: SiLU/batch-norm conv blocks, a self-attention
bottleneck, and per-channel affine (scale/shift) modulation of the bottleneck
driven by the standardized metadata vector.

The decoder upsamples bilinearly, halves channels with a 1x1 convolution,
then concatenates the matching encoder skip, so the block in/out channel
counts line up with the published layer table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    out_channels: int = 1
    encoder_widths: tuple[int, ...] = (32, 64, 128, 256)
    bottleneck_width: int = 512
    attention_heads: int = 4
    cond_dim: int = 15
    film_hidden: int = 128
    input_size: int = 384

    def __post_init__(self):
        w = self.encoder_widths
        if any(a >= b for a, b in zip(w, w[1:])):
            raise ValueError("encoder_widths must be strictly increasing")
        if self.bottleneck_width != 2 * w[-1]:
            raise ValueError("bottleneck_width must be twice the last encoder width")
        levels = len(w)
        if self.input_size % (2 ** levels) != 0:
            raise ValueError(f"input_size must be divisible by {2 ** levels}")
        if self.bottleneck_width % self.attention_heads != 0:
            raise ValueError("bottleneck_width must divide evenly into attention heads")


@dataclass
class TraceRow:
    name: str
    in_size: int
    in_ch: int
    out_size: int
    out_ch: int

    def quad(self) -> tuple[int, int, int, int]:
        return (self.in_size, self.in_ch, self.out_size, self.out_ch)


class ConvBlock(nn.Module):
    """Two 3x3 stride-1 convolutions, each with batch norm and SiLU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.SiLU(),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.SiLU(),
        )

    def forward(self, x):
        return self.block(x)


class SelfAttention2d(nn.Module):
    """Residual multi-head attention over flattened spatial positions."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        if channels % heads != 0:
            raise ShapeError(f"{channels} channels not divisible by {heads} heads")
        groups = 32 if channels % 32 == 0 else math.gcd(channels, 32)
        self.norm = nn.GroupNorm(groups, channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x):
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        attended, _ = self.attn(tokens, tokens, tokens, need_weights=False)
        return x + attended.transpose(1, 2).reshape(b, c, h, w)


class ConditionEmbed(nn.Module):
    """MLP mapping the metadata vector to per-channel (gamma, beta).

    The output layer starts at zero weights with bias (1, ..., 1, 0, ..., 0)
    so modulation is the identity until training moves it.
    """

    def __init__(self, cond_dim: int, hidden: int, channels: int):
        super().__init__()
        self.channels = channels
        self.hidden = nn.Linear(cond_dim, hidden)
        self.out = nn.Linear(hidden, 2 * channels)
        nn.init.zeros_(self.out.weight)
        with torch.no_grad():
            self.out.bias[:channels] = 1.0
            self.out.bias[channels:] = 0.0

    def forward(self, v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if v.shape[-1] != self.hidden.in_features:
            raise ShapeError(
                f"conditioning vector length {v.shape[-1]} != {self.hidden.in_features}"
            )
        e = self.out(F.silu(self.hidden(v)))
        return e[..., : self.channels], e[..., self.channels:]


def film_modulate(h: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Per-channel affine: out[c] = gamma[c] * h[c] + beta[c]."""
    if gamma.shape[-1] != h.shape[-3] or beta.shape[-1] != h.shape[-3]:
        raise ShapeError(
            f"modulation length {gamma.shape[-1]}/{beta.shape[-1]} vs {h.shape[-3]} channels"
        )
    while gamma.dim() < h.dim():
        gamma = gamma.unsqueeze(-1)
        beta = beta.unsqueeze(-1)
    return gamma * h + beta


class Upscale(nn.Module):
    """Bilinear 2x upsample followed by a channel-halving 1x1 convolution."""

    def __init__(self, channels: int):
        super().__init__()
        self.reduce = nn.Conv2d(channels, channels // 2, 1)

    def interpolate(self, x):
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

    def forward(self, x):
        return self.reduce(self.interpolate(x))


class CondUNet(nn.Module):
    def __init__(self, config: UNetConfig | None = None):
        super().__init__()
        self.config = config or UNetConfig()
        cfg = self.config
        widths = cfg.encoder_widths
        self.encoders = nn.ModuleList()
        prev = cfg.in_channels
        for w in widths:
            self.encoders.append(ConvBlock(prev, w))
            prev = w
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = ConvBlock(widths[-1], cfg.bottleneck_width)
        self.attention = SelfAttention2d(cfg.bottleneck_width, cfg.attention_heads)
        self.condition = ConditionEmbed(cfg.cond_dim, cfg.film_hidden, cfg.bottleneck_width)
        self.upscales = nn.ModuleList()
        self.decoders = nn.ModuleList()
        ch = cfg.bottleneck_width
        for w in reversed(widths):
            self.upscales.append(Upscale(ch))
            self.decoders.append(ConvBlock(ch // 2 + w, w))
            ch = w
        self.final = nn.Conv2d(widths[0], cfg.out_channels, 3, padding=1)

    def forward(self, rgb: torch.Tensor, cond: torch.Tensor,
                trace: list[TraceRow] | None = None) -> torch.Tensor:
        """Map [-1, 1] RGB plus a standardized metadata vector to a (0, 1)
        thermal map. ``trace`` collects one row per architecture stage."""
        squeeze = rgb.dim() == 3
        if squeeze:
            rgb = rgb.unsqueeze(0)
            cond = cond.unsqueeze(0) if cond.dim() == 1 else cond
        cfg = self.config
        if rgb.shape[1] != cfg.in_channels or rgb.shape[2] != cfg.input_size or rgb.shape[3] != cfg.input_size:
            raise ShapeError(
                f"Encoder 1 expects [{cfg.in_channels},{cfg.input_size},{cfg.input_size}] "
                f"input, got {list(rgb.shape[1:])}"
            )

        def note(name, x_in, x_out):
            if trace is not None:
                trace.append(TraceRow(name, x_in.shape[-1], x_in.shape[1],
                                      x_out.shape[-1], x_out.shape[1]))

        skips = []
        x = rgb
        for i, enc in enumerate(self.encoders, start=1):
            e = enc(x)
            note(f"Encoder {i}", x, e)
            skips.append(e)
            p = self.pool(e)
            note(f"Max Pool {i}", e, p)
            x = p

        h = self.bottleneck(x)
        note("Bottleneck", x, h)
        a = self.attention(h)
        note(f"SelfAttention2d ({cfg.attention_heads} heads)", h, a)
        gamma, beta = self.condition(cond)
        m = film_modulate(a, gamma, beta)
        note("FiLM conditioning", a, m)

        x = m
        n_levels = len(self.encoders)
        for i, (up, dec) in enumerate(zip(self.upscales, self.decoders)):
            level = n_levels - i
            upsampled = up.interpolate(x)
            note(f"Upscale {level} (Bilinear)", x, upsampled)
            reduced = up.reduce(upsampled)
            merged = torch.cat([reduced, skips[level - 1]], dim=1)
            d = dec(merged)
            note(f"Decoder {level}", merged, d)
            x = d

        logits = self.final(x)
        out = torch.sigmoid(logits)
        note("Final Conv", x, out)
        return out.squeeze(0) if squeeze else out

    def forward_traced(self, rgb: torch.Tensor, cond: torch.Tensor) -> tuple[torch.Tensor, list[TraceRow]]:
        trace: list[TraceRow] = []
        out = self.forward(rgb, cond, trace=trace)
        return out, trace
