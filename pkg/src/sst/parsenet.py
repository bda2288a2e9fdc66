"""Compact parsing network: strided conv encoder to 1/16, a three-stage
upsampling decoder emitting the 1/16, 1/8 and 1/4 feature maps, and a final
block producing full-resolution features. Tensors are channels-first."""

from __future__ import annotations

import logging
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from sst.kernels import IGNORE

log = logging.getLogger(__name__)


class ShapeError(ValueError):
    pass


class FeaturePyramid(NamedTuple):
    h1: torch.Tensor  # 1/16
    h2: torch.Tensor  # 1/8
    h3: torch.Tensor  # 1/4
    f: torch.Tensor  # full resolution

    @property
    def scales(self):
        return (self.h1, self.h2, self.h3)


SCALE_FACTORS = {1: 16, 2: 8, 3: 4}


def _conv(cin, cout, stride=1, k=3):
    groups = 8 if cout % 8 == 0 else 1
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=False),
        nn.GroupNorm(groups, cout),
        nn.ReLU(inplace=True),
    )


class ParseNet(nn.Module):
    def __init__(self, dim: int = 64, widths=None):
        super().__init__()
        c0, c1, c2, c3, c4 = widths or (dim // 4, dim // 2, 3 * dim // 4, dim, dim)
        self.dim = dim
        self.stem = _conv(3, c0)
        self.down1 = _conv(c0, c1, stride=2)
        self.down2 = _conv(c1, c2, stride=2)
        self.down3 = _conv(c2, c3, stride=2)
        self.down4 = _conv(c3, c4, stride=2)
        self.top = _conv(c4, dim)
        self.lat3 = nn.Conv2d(c3, dim, 1)
        self.lat2 = nn.Conv2d(c2, dim, 1)
        self.lat0 = nn.Conv2d(c0, dim, 1)
        self.dec2 = _conv(dim, dim)
        self.dec3 = _conv(dim, dim)
        self.out = nn.Sequential(nn.ReLU(), nn.Conv2d(dim, dim, 1))

    def forward(self, image: torch.Tensor) -> FeaturePyramid:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected B x 3 x H x W input, got {tuple(image.shape)}")
        H, W = image.shape[-2:]
        if H % 16 or W % 16:
            raise ShapeError(f"input size {H}x{W} is not divisible by 16")
        x0 = self.stem(image)
        x2 = self.down2(self.down1(x0))
        x3 = self.down3(x2)
        h1 = self.top(self.down4(x3))
        h2 = self.dec2(F.interpolate(h1, scale_factor=2, mode="nearest") + self.lat3(x3))
        h3 = self.dec3(F.interpolate(h2, scale_factor=2, mode="nearest") + self.lat2(x2))
        f = self.out(F.interpolate(h3, scale_factor=4, mode="bilinear", align_corners=False) + self.lat0(x0))
        return FeaturePyramid(h1, h2, h3, f)


class Head(nn.Module):
    """Per-domain 1x1 prediction layer; ``weight`` is D x Z."""

    def __init__(self, dim: int, num_classes: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(dim, num_classes) / dim**0.5)
        self.bias = nn.Parameter(torch.zeros(num_classes))

    def forward(self, f):
        return predict(f, self.weight, self.bias)


def predict(f: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Per-pixel affine map of B x D x H x W features to B x Z x H x W logits."""
    if f.shape[1] != weight.shape[0]:
        raise ShapeError(f"feature dim {f.shape[1]} != head input dim {weight.shape[0]}")
    out = torch.einsum("bdhw,dz->bzhw", f, weight)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


def check_labels(labels: torch.Tensor, Z: int):
    bad = (labels != IGNORE) & ((labels < 0) | (labels >= Z))
    if bad.any():
        idx = tuple(int(v) for v in bad.nonzero()[0])
        raise ValueError(f"label {int(labels[idx])} at {idx} is not < Z={Z} and not the ignore value {IGNORE}")


def seg_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean pixel-wise softmax cross-entropy over non-ignored pixels."""
    if logits.shape[0] != labels.shape[0] or logits.shape[2:] != labels.shape[1:]:
        raise ShapeError(f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} disagree")
    labels = labels.long()
    check_labels(labels, logits.shape[1])
    count = int((labels != IGNORE).sum())
    if count == 0:
        log.warning("segmentation loss: every pixel is ignored, returning 0")
        return logits.sum() * 0.0
    return F.cross_entropy(logits, labels, ignore_index=IGNORE, reduction="sum") / count
