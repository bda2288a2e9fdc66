"""Cross-domain mapping of category representations and the cosine
consistency losses that tie mapped and native representations together."""

from __future__ import annotations

import logging

import numpy as np
import torch
from torch import nn

from sst.mse import NUM_LAYERS, masked_attention
from sst.parsenet import ShapeError

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-8
_warned = False


class SMLayer(nn.Module):
    """Query/key/value projections; dynamic layers also carry the two
    adjacency projections ``w_src`` and ``w_dst``."""

    def __init__(self, dim: int, dynamic: bool):
        super().__init__()
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.dynamic = dynamic
        if dynamic:
            self.w_src = nn.Linear(dim, dim, bias=False)
            self.w_dst = nn.Linear(dim, dim, bias=False)


def static_map(x_src, x_dst, m_static, layer: SMLayer):
    """Map Z_src x D representations into the Z_dst label space under a fixed similarity."""
    want = (x_dst.shape[-2], x_src.shape[-2])
    if tuple(m_static.shape) != want:
        raise ShapeError(f"static matrix shape {tuple(m_static.shape)} != expected (Z_dst, Z_src) = {want}")
    return masked_attention(layer.q(x_dst), layer.k(x_src), layer.v(x_src), m_static.to(x_src.dtype))


def dynamic_adjacency(s_src, s_dst, layer: SMLayer):
    return layer.w_dst(s_dst) @ layer.w_src(s_src).transpose(-1, -2)


def dynamic_map(x_src, x_dst, s_src, s_dst, layer: SMLayer, scale: int | None = None):
    """Per-image mapping whose mask is the similarity of projected category features.

    ``s_src``/``s_dst`` may be :class:`~sst.msa.CategoryFeatures`; their scale must
    equal ``scale`` when both are given.
    """
    for s in (s_src, s_dst):
        s_scale = getattr(s, "scale", None)
        if scale is not None and s_scale is not None and s_scale != scale:
            raise ValueError(f"category features from scale {s_scale} used with representations of scale {scale}")
    s_src = getattr(s_src, "s", s_src)
    s_dst = getattr(s_dst, "s", s_dst)
    m_dyn = dynamic_adjacency(s_src, s_dst, layer)
    return masked_attention(layer.q(x_dst), layer.k(x_src), layer.v(x_src), m_dyn)


def cosine_distance(x, y):
    """Row-wise ``1 - cos(x, y)`` with norms floored at ``NORM_FLOOR``."""
    nx = x.norm(dim=-1)
    ny = y.norm(dim=-1)
    if bool((nx < NORM_FLOOR).any()) or bool((ny < NORM_FLOOR).any()):
        global _warned
        # absent categories produce zero mapped rows every step; say so once
        (log.debug if _warned else log.warning)(
            "consistency loss: zero-norm representation row, norm floored at %g", NORM_FLOOR)
        _warned = True
    cos = (x * y).sum(-1) / (nx.clamp(min=NORM_FLOOR) * ny.clamp(min=NORM_FLOOR))
    return 1.0 - cos


def _check(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"representation {tuple(a.shape)} vs mapped {tuple(b.shape)}")


def scr_dataset(x1, x2, mapped_2to1, mapped_1to2):
    """Symmetric mean cosine distance between native and mapped representations.

    Leading batch dimensions are averaged over.
    """
    _check(x1, mapped_2to1)
    _check(x2, mapped_1to2)
    return cosine_distance(x1, mapped_2to1).mean() + cosine_distance(x2, mapped_1to2).mean()


def scr_image(x1_levels, x2_levels, mapped_2to1_levels, mapped_1to2_levels):
    """Sum over scales of the symmetric consistency term (no division by the scale count)."""
    if not (len(x1_levels) == len(x2_levels) == len(mapped_2to1_levels) == len(mapped_1to2_levels) == NUM_LAYERS):
        raise ValueError(f"image-level consistency needs {NUM_LAYERS} scales per direction")
    total = 0.0
    for x1, x2, m21, m12 in zip(x1_levels, x2_levels, mapped_2to1_levels, mapped_1to2_levels):
        total = total + scr_dataset(x1, x2, m21, m12)
    return total


class Direction(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.layers = nn.ModuleList(SMLayer(dim, dynamic=i > 0) for i in range(NUM_LAYERS + 1))


class MST(nn.Module):
    """Semantic transfer between domains ``a`` and ``b``.

    ``m_ab`` is the Z_b x Z_a static similarity; the b->a direction uses its
    transpose. Each direction has its own projections.
    """

    def __init__(self, dim: int, m_ab):
        super().__init__()
        self.a2b = Direction(dim)
        self.b2a = Direction(dim)
        m = torch.as_tensor(np.asarray(m_ab, dtype=np.float32)).clone()
        self.register_buffer("m_ab", m, persistent=False)
        self.register_buffer("m_ba", m.t().contiguous(), persistent=False)

    def dataset_loss(self, x0_a, x0_b):
        mapped_ab = static_map(x0_a, x0_b, self.m_ab, self.a2b.layers[0])
        mapped_ba = static_map(x0_b, x0_a, self.m_ba, self.b2a.layers[0])
        return scr_dataset(x0_a, x0_b, mapped_ba, mapped_ab)

    def image_loss(self, xs_a, xs_b, feats_a, feats_b):
        """``xs_*``: per-scale B x Z x D representations; ``feats_*``: matching CategoryFeatures."""
        m_ab, m_ba = [], []
        for l in range(1, NUM_LAYERS + 1):
            xa, xb, fa, fb = xs_a[l - 1], xs_b[l - 1], feats_a[l - 1], feats_b[l - 1]
            m_ab.append(dynamic_map(xa, xb, fa, fb, self.a2b.layers[l], scale=l))
            m_ba.append(dynamic_map(xb, xa, fb, fa, self.b2a.layers[l], scale=l))
        return scr_image(xs_a, xs_b, m_ba, m_ab)
