"""Category-aware pooling of pyramid features into one vector per label."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from sst.kernels import IGNORE
from sst.parsenet import SCALE_FACTORS, ShapeError


@dataclass
class RegionMasks:
    masks: torch.Tensor  # B x Z x h x w, bool
    presence: torch.Tensor  # B x Z, bool
    scale: int


@dataclass
class CategoryFeatures:
    s: torch.Tensor  # B x Z x D
    presence: torch.Tensor  # B x Z
    scale: int


def region_masks(labels: torch.Tensor, num_classes: int, scale: int | None = None, factor: int | None = None) -> RegionMasks:
    """Nearest-neighbour (top-left) downsample of the label raster, split one-hot.

    Ignore pixels belong to no mask.
    """
    if factor is None:
        factor = SCALE_FACTORS[scale]
    if labels.ndim == 2:
        labels = labels.unsqueeze(0)
    H, W = labels.shape[-2:]
    if H % factor or W % factor:
        raise ShapeError(f"label raster {H}x{W} is not divisible by {factor}")
    small = labels[:, ::factor, ::factor].long()
    classes = torch.arange(num_classes, device=labels.device).view(1, -1, 1, 1)
    masks = small.unsqueeze(1) == classes
    masks &= (small != IGNORE).unsqueeze(1)
    return RegionMasks(masks, masks.flatten(2).any(-1), scale if scale is not None else 0)


def pool(features: torch.Tensor, masks: torch.Tensor):
    """Average and max of B x D x h x w features inside each B x Z x h x w mask.

    The masks partition the non-ignored pixels, so both reductions are done as
    one scatter over the per-pixel category index. Absent categories get zero rows.
    """
    if features.shape[-2:] != masks.shape[-2:] or features.shape[0] != masks.shape[0]:
        raise ShapeError(f"features {tuple(features.shape)} and masks {tuple(masks.shape)} disagree")
    B, D = features.shape[:2]
    Z = masks.shape[1]
    flat = masks.flatten(2)
    # pixels outside every mask go to a spill bin Z that is dropped afterwards
    index = torch.where(flat.any(1), flat.to(torch.uint8).argmax(1), torch.full_like(flat[:, 0], Z, dtype=torch.long))
    index = index.long().unsqueeze(1).expand(B, D, -1)
    values = features.flatten(2)
    count = flat.sum(-1)  # B x Z
    present = count > 0
    total = values.new_zeros(B, D, Z + 1).scatter_add(2, index, values)[..., :Z]
    avg = total.transpose(1, 2) / count.clamp(min=1).unsqueeze(-1).to(values.dtype)
    mx = values.new_zeros(B, D, Z + 1).scatter_reduce(2, index, values, reduce="amax", include_self=False)
    mx = mx[..., :Z].transpose(1, 2)
    mx = torch.where(present.unsqueeze(-1), mx, torch.zeros_like(mx))
    return avg, mx, present


def aggregate(features: torch.Tensor, masks: RegionMasks, w_s: torch.Tensor) -> CategoryFeatures:
    avg, mx, present = pool(features, masks.masks)
    s = torch.cat([avg, mx], dim=-1) @ w_s
    s = s * present.unsqueeze(-1).to(s.dtype)
    return CategoryFeatures(s, present, masks.scale)


class MSA(nn.Module):
    """Holds the 2D -> D fusion projection shared by all scales and domains."""

    def __init__(self, dim: int):
        super().__init__()
        self.w_s = nn.Parameter(torch.randn(2 * dim, dim) / (2 * dim) ** 0.5)

    def forward(self, pyramid, labels: torch.Tensor, num_classes: int):
        """Category features for scales 1..3 of ``pyramid``."""
        out = []
        for scale, h in zip((1, 2, 3), pyramid.scales):
            rm = region_masks(labels, num_classes, scale)
            out.append(aggregate(h, rm, self.w_s))
        return out
