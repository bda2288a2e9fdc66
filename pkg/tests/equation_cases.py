"""Random small instances compared against the scalar-loop oracles. Each
function returns the worst absolute deviation over ``n`` cases."""

import torch

from sst.msa import aggregate, region_masks
from sst.mse import aux_logits, masked_attention
from sst.mst import SMLayer, dynamic_map, scr_dataset, scr_image, static_map
import oracles


def _rng(seed):
    return torch.Generator().manual_seed(seed)


def _dims(g):
    Z = int(torch.randint(1, 6, (), generator=g))
    D = int(torch.randint(1, 9, (), generator=g))
    return Z, D


def msa_cases(n=50, seed=0):
    g = _rng(seed)
    worst = 0.0
    for _ in range(n):
        Z, D = _dims(g)
        factor = int([1, 2, 4][int(torch.randint(0, 3, (), generator=g))])
        size = 8
        labels = torch.randint(0, Z, (size, size), generator=g)
        labels[torch.rand(size, size, generator=g) < 0.15] = 255
        feat = torch.randn(1, D, size // factor, size // factor, generator=g)
        w_s = torch.randn(2 * D, D, generator=g)
        rm = region_masks(labels, Z, factor=factor)
        got = aggregate(feat, rm, w_s).s[0]
        ref = oracles.msa_row_oracle(feat[0].tolist(), labels.tolist(), Z, w_s.tolist(), factor)
        worst = max(worst, float((got - torch.tensor(ref)).abs().max()))
    return worst


def aux_logits_cases(n=50, seed=1):
    g = _rng(seed)
    worst = 0.0
    for _ in range(n):
        Z, D = _dims(g)
        H, W = (int(v) for v in torch.randint(1, 9, (2,), generator=g))
        f = torch.randn(1, D, H, W, generator=g)
        x = torch.randn(1, Z, D, generator=g)
        got = aux_logits(f, x)[0]
        ref = torch.tensor(oracles.aux_logits_oracle(f[0].tolist(), x[0].tolist()))
        worst = max(worst, float((got - ref).abs().max()))
    return worst


def _layer(D, dynamic, g):
    layer = SMLayer(D, dynamic)
    with torch.no_grad():
        for p in layer.parameters():
            p.copy_(torch.randn(p.shape, generator=g) / D ** 0.5)
    return layer


def static_map_cases(n=50, seed=2):
    g = _rng(seed)
    worst = 0.0
    for _ in range(n):
        zs, D = _dims(g)
        zd = int(torch.randint(1, 6, (), generator=g))
        xs, xd = torch.randn(zs, D, generator=g), torch.randn(zd, D, generator=g)
        m = (torch.rand(zd, zs, generator=g) < 0.6).float()
        layer = _layer(D, False, g)
        with torch.no_grad():
            got = static_map(xs, xd, m, layer)
        ref = oracles.static_map_oracle(xs.tolist(), xd.tolist(), m.tolist(), layer.q.weight.tolist(),
                                        layer.k.weight.tolist(), layer.v.weight.tolist())
        worst = max(worst, float((got - torch.tensor(ref)).abs().max()))
    return worst


def dynamic_map_cases(n=50, seed=3):
    g = _rng(seed)
    worst = 0.0
    for _ in range(n):
        zs, D = _dims(g)
        zd = int(torch.randint(1, 6, (), generator=g))
        xs, xd = torch.randn(zs, D, generator=g), torch.randn(zd, D, generator=g)
        ss, sd = torch.randn(zs, D, generator=g), torch.randn(zd, D, generator=g)
        ss[torch.rand(zs, generator=g) < 0.3] = 0.0  # absent categories
        layer = _layer(D, True, g)
        with torch.no_grad():
            got = dynamic_map(xs, xd, ss, sd, layer)
        ref, _ = oracles.dynamic_map_oracle(xs.tolist(), xd.tolist(), ss.tolist(), sd.tolist(),
                                            layer.q.weight.tolist(), layer.k.weight.tolist(),
                                            layer.v.weight.tolist(), layer.w_src.weight.tolist(),
                                            layer.w_dst.weight.tolist())
        worst = max(worst, float((got - torch.tensor(ref)).abs().max()))
    return worst


def scr_cases(n=50, seed=4):
    g = _rng(seed)
    worst_d = worst_i = 0.0
    for _ in range(n):
        z1, D = _dims(g)
        z2 = int(torch.randint(1, 6, (), generator=g))
        sets = [[torch.randn(z1, D, generator=g), torch.randn(z2, D, generator=g),
                 torch.randn(z1, D, generator=g), torch.randn(z2, D, generator=g)] for _ in range(3)]
        got = float(scr_dataset(*sets[0]))
        ref = oracles.scr_oracle(*(t.tolist() for t in sets[0]))
        worst_d = max(worst_d, abs(got - ref))
        got_i = float(scr_image(*(list(t) for t in zip(*sets))))
        ref_i = sum(oracles.scr_oracle(*(t.tolist() for t in s)) for s in sets)
        worst_i = max(worst_i, abs(got_i - ref_i))
    return worst_d, worst_i


def masked_attention_cases(n=20, seed=5):
    """Returns (all-ones mask vs plain attention deviation)."""
    g = _rng(seed)
    worst = 0.0
    for _ in range(n):
        Z, D = _dims(g)
        q, k, v = (torch.randn(Z, D, generator=g) for _ in range(3))
        plain = torch.softmax(q @ k.T / D ** 0.5, -1) @ v
        worst = max(worst, float((masked_attention(q, k, v, torch.ones(Z, Z)) - plain).abs().max()))
    return worst
