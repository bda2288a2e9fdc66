"""Learnable per-domain category embeddings refined by three masked
cross-attention (semantic propagation) layers."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from sst.parsenet import ShapeError, seg_loss

NUM_LAYERS = 3


class SPLayer(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.f_q = nn.Linear(dim, dim, bias=False)
        self.f_k = nn.Linear(dim, dim, bias=False)
        self.f_v = nn.Linear(dim, dim, bias=False)


def masked_attention(q, k, v, mask):
    """``softmax(q k^T / sqrt(D)) * mask @ v``; the mask multiplies normalized weights."""
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return (torch.softmax(logits, dim=-1) * mask) @ v


def sp_layer(x_prev: torch.Tensor, s: torch.Tensor, mask: torch.Tensor, layer: SPLayer, index: int = 0) -> torch.Tensor:
    """One propagation step: attend from categories to pooled features, plus residual."""
    if x_prev.shape[-2:] != s.shape[-2:]:
        raise ShapeError(f"SP layer {index}: X {tuple(x_prev.shape)} vs S {tuple(s.shape)}")
    Z = x_prev.shape[-2]
    if mask.shape != (Z, Z):
        raise ShapeError(f"SP layer {index}: mask {tuple(mask.shape)} != ({Z}, {Z})")
    out = masked_attention(layer.f_q(x_prev), layer.f_k(s), layer.f_v(s), mask.to(x_prev.dtype)) + x_prev
    if not torch.isfinite(out).all():
        raise FloatingPointError(f"SP layer {index}: non-finite category representation")
    return out


def aux_logits(f: torch.Tensor, x_last: torch.Tensor) -> torch.Tensor:
    """Dot product of B x D x H x W features with B x Z x D representations."""
    if f.shape[1] != x_last.shape[-1]:
        raise ShapeError(f"feature dim {f.shape[1]} != representation dim {x_last.shape[-1]}")
    if x_last.ndim == 2:
        return torch.einsum("bdhw,zd->bzhw", f, x_last)
    return torch.einsum("bdhw,bzd->bzhw", f, x_last)


aux_loss = seg_loss


class MSE(nn.Module):
    def __init__(self, num_classes: int, dim: int, intra):
        super().__init__()
        self.x0 = nn.Parameter(torch.randn(num_classes, dim) * 0.02)
        self.layers = nn.ModuleList(SPLayer(dim) for _ in range(NUM_LAYERS))
        self.register_buffer("intra", torch.as_tensor(np.asarray(intra, dtype=np.float32)).clone(), persistent=False)

    def forward(self, feats, masked: bool = True):
        """Returns ``[X_1, X_2, X_3]``, each B x Z x D, from per-scale category features."""
        mask = self.intra if masked else torch.ones_like(self.intra)
        x = self.x0.unsqueeze(0).expand(feats[0].s.shape[0], -1, -1)
        out = []
        for i, (layer, cf) in enumerate(zip(self.layers, feats), start=1):
            x = sp_layer(x, cf.s, mask, layer, i)
            out.append(x)
        return out
