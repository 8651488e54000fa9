"""Pix2Pix comparison variant: a PatchGAN discriminator over the
channel-concatenated (RGB, thermal) pair, trained against the shared
conditional U-Net generator with the adversarial + lambda * L1 objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .losses import NonFiniteLossError


@dataclass(frozen=True)
class PatchGANConfig:
    in_channels: int = 4
    widths: tuple[int, ...] = (64, 128, 256, 512)
    kernel: int = 4
    receptive_field: int = 70


def receptive_field(cfg: PatchGANConfig) -> int:
    """Receptive field of one output logit, from the layer stack arithmetic."""
    strides = [2, 2, 2, 1, 1]
    r, j = 1, 1
    for s in strides:
        r += (cfg.kernel - 1) * j
        j *= s
    return r


class PatchDiscriminator(nn.Module):
    """C64(s2)-C128(s2)-C256(s2)-C512(s1)-C1(s1), kernel 4, LeakyReLU(0.2).

    Batch norm on interior blocks only; each output logit classifies one
    70x70 input patch as real or fake.
    """

    def __init__(self, cfg: PatchGANConfig | None = None):
        super().__init__()
        self.cfg = cfg or PatchGANConfig()
        w = self.cfg.widths
        k = self.cfg.kernel
        layers = [
            nn.Conv2d(self.cfg.in_channels, w[0], k, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        for prev, cur, stride in zip(w, w[1:], (2, 2, 1)):
            layers += [
                nn.Conv2d(prev, cur, k, stride=stride, padding=1, bias=False),
                nn.BatchNorm2d(cur),
                nn.LeakyReLU(0.2, inplace=True),
            ]
        layers.append(nn.Conv2d(w[-1], 1, k, stride=1, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, rgb: torch.Tensor, thermal: torch.Tensor) -> torch.Tensor:
        if rgb.shape[-2:] != thermal.shape[-2:]:
            raise ValueError(
                f"rgb {list(rgb.shape[-2:])} and thermal {list(thermal.shape[-2:])} sizes differ"
            )
        return self.model(torch.cat([rgb, thermal], dim=-3))


def unit_to_pm1(x: torch.Tensor) -> torch.Tensor:
    """Map a [0,1] thermal map into the discriminator's [-1,1] input range."""
    return x * 2.0 - 1.0


def generator_loss(
    pred_logits_on_fake: torch.Tensor,
    fake: torch.Tensor,
    real: torch.Tensor,
    lambda_l1: float = 100.0,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Adversarial (fool-the-discriminator) term plus lambda * L1."""
    if lambda_l1 < 0:
        raise ValueError("lambda_l1 must be >= 0")
    adv = F.binary_cross_entropy_with_logits(
        pred_logits_on_fake, torch.ones_like(pred_logits_on_fake)
    )
    l1 = (fake - real).abs().mean()
    total = adv + lambda_l1 * l1
    return total, {
        "adversarial": float(adv.detach()),
        "l1": float(l1.detach()),
        "l1_weighted": float(lambda_l1 * l1.detach()),
        "total": float(total.detach()),
    }


def discriminator_loss(logits_real: torch.Tensor, logits_fake: torch.Tensor) -> torch.Tensor:
    if logits_real.shape != logits_fake.shape:
        raise ValueError("real/fake logit shapes differ")
    real_term = F.binary_cross_entropy_with_logits(logits_real, torch.ones_like(logits_real))
    fake_term = F.binary_cross_entropy_with_logits(logits_fake, torch.zeros_like(logits_fake))
    return 0.5 * (real_term + fake_term)


def gan_train_step(
    batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    generator: nn.Module,
    discriminator: PatchDiscriminator,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    lambda_l1: float = 100.0,
) -> dict[str, float]:
    """One discriminator update on (real, detached fake), then one generator
    update. The batch arrives already preprocessed; no image conditioning
    happens inside the adversarial graph."""
    rgb, real, cond = batch
    fake = generator(rgb, cond)

    opt_d.zero_grad(set_to_none=True)
    logits_real = discriminator(rgb, unit_to_pm1(real))
    logits_fake = discriminator(rgb, unit_to_pm1(fake.detach()))
    d_loss = discriminator_loss(logits_real, logits_fake)
    if not torch.isfinite(d_loss):
        raise NonFiniteLossError(f"discriminator loss is {float(d_loss.detach())}")
    d_loss.backward()
    opt_d.step()

    opt_g.zero_grad(set_to_none=True)
    logits_fake_for_g = discriminator(rgb, unit_to_pm1(fake))
    g_total, parts = generator_loss(logits_fake_for_g, fake, real, lambda_l1)
    if not torch.isfinite(g_total):
        raise NonFiniteLossError(f"generator loss is {float(g_total.detach())}")
    g_total.backward()
    opt_g.step()

    return {
        "d_loss": float(d_loss.detach()),
        "g_adversarial": parts["adversarial"],
        "g_l1": parts["l1"],
        "g_total": parts["total"],
    }
