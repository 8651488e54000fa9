"""Learned perceptual distance over AlexNet-topology features.

Features are tapped after each of the five ReLU stages, unit-normalized
along channels, squared-differenced, weighted by per-layer 1x1 convolutions,
spatially averaged, and summed.

Two weight sources:

* ``pretrained`` — ImageNet AlexNet weights from an explicit state-dict file
  or the torchvision cache. Raises :class:`PerceptualWeightsError` with
  download instructions when neither is available (this sandboxed pipeline
  never downloads silently).
* ``random`` — a frozen, seeded initialization. Uncalibrated against human
  judgments but deterministic and self-contained; the default for offline
  training and CI.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

ALEXNET_URL = "https://download.pytorch.org/models/alexnet-owt-7be5be79.pth"

# Channel-wise shift/scale applied to [-1, 1] inputs before the backbone,
# matching ImageNet normalization expressed in that range.
_SHIFT = (-0.030, -0.088, -0.188)
_SCALE = (0.458, 0.448, 0.450)

_TAP_CHANNELS = (64, 192, 384, 256, 256)


class PerceptualWeightsError(RuntimeError):
    pass


class AlexNetFeatures(nn.Module):
    """The five convolutional stages; forward returns all five tap outputs."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 64, 11, stride=4, padding=2)
        self.conv2 = nn.Conv2d(64, 192, 5, padding=2)
        self.conv3 = nn.Conv2d(192, 384, 3, padding=1)
        self.conv4 = nn.Conv2d(384, 256, 3, padding=1)
        self.conv5 = nn.Conv2d(256, 256, 3, padding=1)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        t1 = F.relu(self.conv1(x))
        t2 = F.relu(self.conv2(F.max_pool2d(t1, 3, 2)))
        t3 = F.relu(self.conv3(F.max_pool2d(t2, 3, 2)))
        t4 = F.relu(self.conv4(t3))
        t5 = F.relu(self.conv5(t4))
        return [t1, t2, t3, t4, t5]


def _seeded_init(features: AlexNetFeatures, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for conv in (features.conv1, features.conv2, features.conv3,
                 features.conv4, features.conv5):
        nn.init.kaiming_uniform_(conv.weight, a=0.2, generator=gen)
        nn.init.zeros_(conv.bias)


def _load_pretrained(features: AlexNetFeatures, weights_path) -> None:
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
    else:
        try:
            from torchvision.models import AlexNet_Weights, alexnet

            state = alexnet(weights=AlexNet_Weights.IMAGENET1K_V1).state_dict()
        except Exception as exc:
            raise PerceptualWeightsError(
                "pretrained backbone weights unavailable: "
                f"{exc}. Download {ALEXNET_URL} and pass its path as "
                "weights_path (or construct with backbone='random' for a "
                "self-contained uncalibrated distance)."
            ) from exc
    key_map = {
        "features.0": "conv1", "features.3": "conv2", "features.6": "conv3",
        "features.8": "conv4", "features.10": "conv5",
    }
    own = features.state_dict()
    remapped = {}
    for k, v in state.items():
        for prefix, name in key_map.items():
            if k.startswith(prefix + "."):
                remapped[name + k[len(prefix):]] = v
    missing = set(own) - set(remapped)
    if missing:
        raise PerceptualWeightsError(
            f"state dict at {weights_path} lacks backbone keys {sorted(missing)}; "
            f"expected a torchvision AlexNet checkpoint ({ALEXNET_URL})"
        )
    features.load_state_dict(remapped)


class LpipsDistance(nn.Module):
    """Frozen feature-space distance; forward returns one value per sample.

    Accepts single-channel [N,1,H,W] maps (replicated to three channels) or
    [N,3,H,W] images, both in [0, 1].
    """

    def __init__(self, backbone: str = "random", weights_path=None, seed: int = 0):
        super().__init__()
        if backbone not in ("random", "pretrained"):
            raise ValueError(f"unknown backbone mode {backbone!r}")
        self.backbone = backbone
        self.features = AlexNetFeatures()
        if backbone == "pretrained":
            _load_pretrained(self.features, weights_path)
        else:
            _seeded_init(self.features, seed)
        # Uniform per-layer weighting (mean over channels); calibrated "lin"
        # weights would also live here if provided with the checkpoint.
        self.register_buffer("shift", torch.tensor(_SHIFT).view(1, 3, 1, 1))
        self.register_buffer("scale", torch.tensor(_SCALE).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _embed(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.shape[1] == 1:
            x = x.repeat(1, 3, 1, 1)
        x = x * 2.0 - 1.0
        x = (x - self.shift.to(x.dtype)) / self.scale.to(x.dtype)
        return self.features(x)

    @staticmethod
    def _unit_normalize(feat: torch.Tensor) -> torch.Tensor:
        norm = torch.sqrt(torch.sum(feat ** 2, dim=1, keepdim=True)) + 1e-10
        return feat / norm

    def forward(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        feats_p = self._embed(pred)
        feats_t = self._embed(target)
        total = None
        for fp, ft in zip(feats_p, feats_t):
            diff = (self._unit_normalize(fp) - self._unit_normalize(ft)) ** 2
            layer = diff.mean(dim=1).mean(dim=(1, 2))
            total = layer if total is None else total + layer
        return total

    def metric(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """Gradient-free evaluation mode; numerically identical to forward."""
        with torch.no_grad():
            return self.forward(pred, target)
