import logging
import math

import pytest
import torch

from sst.parsenet import Head, ParseNet, ShapeError, predict, seg_loss
from sst.trainer import SSTModel
from gradcheck import full_check


def test_pyramid_shapes_for_48_input():
    net = ParseNet(64).eval()
    pyr = net(torch.rand(2, 3, 48, 48))
    assert tuple(pyr.h1.shape) == (2, 64, 3, 3)
    assert tuple(pyr.h2.shape) == (2, 64, 6, 6)
    assert tuple(pyr.h3.shape) == (2, 64, 12, 12)
    assert tuple(pyr.f.shape) == (2, 64, 48, 48)
    assert all(torch.isfinite(t).all() for t in pyr)


def test_non_multiple_of_16_rejected():
    with pytest.raises(ShapeError, match="50x50"):
        ParseNet(16)(torch.rand(1, 3, 50, 50))


def test_eval_forward_is_deterministic():
    net = ParseNet(16).eval()
    x = torch.rand(1, 3, 32, 32)
    assert all(torch.equal(a, b) for a, b in zip(net(x), net(x)))


def test_pyramid_independent_of_auxiliary_modules(registry):
    torch.manual_seed(3)
    plain = SSTModel(registry, ["coarse", "fine"], 16, aux=False)
    torch.manual_seed(3)
    full = SSTModel(registry, ["coarse", "fine"], 16, pairs=[("coarse", "fine")], aux=True)
    x = torch.rand(2, 3, 32, 32)
    full.net.load_state_dict(plain.net.state_dict())
    assert all(torch.equal(a, b) for a, b in zip(plain.net.eval()(x), full.net.eval()(x)))


def test_predict_zero_and_identity():
    f = torch.randn(1, 5, 3, 3)
    assert torch.equal(predict(torch.zeros_like(f), torch.randn(5, 4), torch.zeros(4)), torch.zeros(1, 4, 3, 3))
    assert torch.equal(predict(f, torch.eye(5), torch.zeros(5)), f)


def test_predict_matches_pixel_loop():
    f = torch.randn(1, 4, 2, 2)
    w, b = torch.randn(4, 3), torch.randn(3)
    out = predict(f, w, b)
    for i in range(2):
        for j in range(2):
            for z in range(3):
                ref = sum(float(f[0, d, i, j]) * float(w[d, z]) for d in range(4)) + float(b[z])
                assert abs(float(out[0, z, i, j]) - ref) < 1e-6


def test_predict_is_linear():
    f1, f2, w = torch.randn(2, 6, 4, 4), torch.randn(2, 6, 4, 4), torch.randn(6, 3)
    lhs = predict(2.5 * f1 - 0.5 * f2, w)
    rhs = 2.5 * predict(f1, w) - 0.5 * predict(f2, w)
    assert torch.allclose(lhs, rhs, atol=1e-5)


def test_seg_loss_closed_forms():
    logits = torch.tensor([10.0, 0.0]).view(1, 2, 1, 1)
    got = float(seg_loss(logits, torch.zeros(1, 1, 1, dtype=torch.long)))
    assert got == pytest.approx(math.log1p(math.exp(-10)), rel=1e-3)
    assert got == pytest.approx(4.54e-5, rel=1e-2)
    uniform = torch.zeros(2, 4, 3, 3)
    labels = torch.randint(0, 4, (2, 3, 3))
    assert float(seg_loss(uniform, labels)) == pytest.approx(math.log(4), abs=1e-6)


def test_seg_loss_all_ignored_warns(caplog):
    with caplog.at_level(logging.WARNING):
        loss = seg_loss(torch.randn(1, 3, 2, 2), torch.full((1, 2, 2), 255))
    assert float(loss) == 0.0
    assert "ignored" in caplog.text


def test_seg_loss_ignores_255_pixels():
    logits = torch.randn(1, 3, 2, 2)
    lab = torch.tensor([[[0, 1], [255, 2]]])
    keep = [(0, 0, 0), (0, 0, 1), (0, 1, 1)]
    ref = sum(-float(torch.log_softmax(logits[0, :, i, j], 0)[lab[b, i, j]]) for b, i, j in keep) / 3
    assert float(seg_loss(logits, lab)) == pytest.approx(ref, abs=1e-6)


def test_seg_loss_rejects_bad_labels():
    with pytest.raises(ValueError, match="label 7"):
        seg_loss(torch.randn(1, 3, 2, 2), torch.tensor([[[0, 7], [1, 2]]]))


def test_seg_loss_gradient_matches_fd():
    logits = torch.randn(1, 3, 2, 2, requires_grad=True)
    lab = torch.tensor([[[0, 2], [1, 255]]])
    assert full_check(lambda: seg_loss(logits, lab), logits, h=1e-3) < 1e-3


def test_head_shapes():
    head = Head(8, 5)
    assert tuple(head.weight.shape) == (8, 5)
    assert tuple(head(torch.randn(2, 8, 4, 4)).shape) == (2, 5, 4, 4)
