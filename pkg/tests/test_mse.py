import math

import pytest
import torch

from sst.msa import CategoryFeatures, region_masks
from sst.mse import MSE, SPLayer, aux_logits, aux_loss, masked_attention, sp_layer
from sst.parsenet import ShapeError
from equation_cases import aux_logits_cases, masked_attention_cases
from gradcheck import full_check


def _identity_layer(D):
    layer = SPLayer(D)
    with torch.no_grad():
        for lin in (layer.f_q, layer.f_k, layer.f_v):
            lin.weight.copy_(torch.eye(D))
    return layer


def test_zero_mask_is_residual_identity():
    x, s = torch.randn(4, 3), torch.randn(4, 3)
    assert torch.equal(sp_layer(x, s, torch.zeros(4, 4), SPLayer(3)), x)


def test_ones_mask_equals_plain_attention():
    assert masked_attention_cases(20) < 1e-6


def test_two_category_hand_case():
    x = torch.tensor([[1.0], [-0.5]])
    s = torch.tensor([[2.0], [0.5]])
    mask = torch.tensor([[1.0, 1.0], [0.0, 1.0]])
    out = sp_layer(x, s, mask, _identity_layer(1)).detach()
    # row 0: weights softmax(1*2, 1*0.5); row 1: softmax(-1, -0.25) masked to its second entry
    w0 = math.exp(2.0) / (math.exp(2.0) + math.exp(0.5))
    row0 = w0 * 2.0 + (1 - w0) * 0.5 + 1.0
    w1 = math.exp(-0.25) / (math.exp(-1.0) + math.exp(-0.25))
    row1 = w1 * 0.5 - 0.5
    assert float(out[0, 0]) == pytest.approx(row0, abs=1e-6)
    assert float(out[1, 0]) == pytest.approx(row1, abs=1e-6)


def test_rows_are_not_renormalized_after_masking():
    Z = 4
    q, k = torch.randn(Z, Z), torch.randn(Z, Z)
    mask = torch.tensor([[1.0, 0, 0, 0], [0, 1, 1, 0], [1, 1, 1, 1], [0, 0, 0, 0]])
    eff = masked_attention(q, k, torch.eye(Z), mask)
    assert torch.equal(eff[mask == 0], torch.zeros(int((mask == 0).sum())))
    assert float(eff[0].sum()) < 1.0
    assert float(eff[2].sum()) == pytest.approx(1.0, abs=1e-6)


def test_zero_value_projection_gives_identity():
    layer = SPLayer(3)
    with torch.no_grad():
        layer.f_v.weight.zero_()
    x = torch.randn(2, 5, 3)
    assert torch.equal(sp_layer(x, torch.randn(2, 5, 3), torch.ones(5, 5), layer), x)


def test_shape_errors_name_the_layer():
    with pytest.raises(ShapeError, match="layer 2"):
        sp_layer(torch.randn(3, 4), torch.randn(3, 4), torch.ones(2, 2), SPLayer(4), 2)
    with pytest.raises(ShapeError):
        sp_layer(torch.randn(3, 4), torch.randn(2, 4), torch.ones(3, 3), SPLayer(4))


def test_non_finite_detected():
    x = torch.randn(2, 2)
    x[0, 0] = float("nan")
    with pytest.raises(FloatingPointError, match="layer 1"):
        sp_layer(x, torch.randn(2, 2), torch.ones(2, 2), SPLayer(2), 1)


def test_aux_logits_cases():
    assert aux_logits_cases(50) < 1e-5
    f = torch.randn(1, 3, 2, 2)
    assert torch.equal(aux_logits(f, torch.zeros(4, 3)), torch.zeros(1, 4, 2, 2))
    assert torch.allclose(aux_logits(f, torch.eye(3)), f)


def test_aux_loss_reuses_segmentation_examples():
    logits = torch.tensor([10.0, 0.0]).view(1, 2, 1, 1)
    assert float(aux_loss(logits, torch.zeros(1, 1, 1, dtype=torch.long))) == pytest.approx(4.54e-5, rel=1e-2)
    assert float(aux_loss(torch.zeros(1, 4, 2, 2), torch.zeros(1, 2, 2, dtype=torch.long))) == pytest.approx(math.log(4))


def test_embedding_init_scale():
    mse = MSE(500, 64, torch.ones(500, 500))
    assert float(mse.x0.detach().std()) == pytest.approx(0.02, rel=0.05)
    assert abs(float(mse.x0.detach().mean())) < 2e-3


def _feats(g, B, Z, D):
    return [CategoryFeatures(torch.randn(B, Z, D, generator=g), torch.ones(B, Z, dtype=torch.bool), l)
            for l in (1, 2, 3)]


def test_embedding_shared_across_images():
    g = torch.Generator().manual_seed(0)
    mse = MSE(3, 4, torch.ones(3, 3))
    a = mse(_feats(g, 1, 3, 4))
    b = mse(_feats(g, 2, 3, 4))
    (a[-1].sum() + b[-1].sum()).backward()
    ga = mse.x0.grad.clone()
    mse.x0.grad = None
    a2 = mse(_feats(torch.Generator().manual_seed(0), 1, 3, 4))
    a2[-1].sum().backward()
    assert not torch.equal(ga, mse.x0.grad)  # second pass contributed to the same parameter


def test_chain_gradient_to_embeddings():
    g = torch.Generator().manual_seed(2)
    Z, D = 3, 4
    intra = torch.tensor([[1.0, 1, 1], [1, 1, 0], [1, 0, 1]])
    mse = MSE(Z, D, intra)
    with torch.no_grad():
        mse.x0.copy_(torch.randn(Z, D, generator=g))
        for p in mse.layers.parameters():
            p.copy_(torch.randn(p.shape, generator=g) / 2)
    f = torch.randn(1, D, 4, 4, generator=g)
    labels = torch.randint(0, Z, (1, 4, 4), generator=g)
    feats = _feats(g, 1, Z, D)
    fn = lambda: aux_loss(aux_logits(f, mse(feats)[-1]), labels)  # noqa: E731
    assert full_check(fn, mse.x0) < 1e-3
    assert full_check(fn, mse.layers[0].f_k.weight) < 1e-3


def test_forward_masks_by_intra():
    mse = MSE(3, 2, torch.eye(3))
    with torch.no_grad():
        mse.x0.copy_(torch.randn(3, 2))
    feats = _feats(torch.Generator().manual_seed(1), 1, 3, 2)
    masked = mse(feats, masked=True)
    unmasked = mse(feats, masked=False)
    assert not torch.allclose(masked[0], unmasked[0])
    assert len(masked) == 3
