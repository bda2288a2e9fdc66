import numpy as np
import pytest

from sst import kernels
from oracles import adjacency_oracle, confusion_oracle

BACKENDS = kernels.available_backends()


def capsule_oracle(H, W, a, b, r, row_min, row_max):
    out = np.zeros((H, W), np.uint8)
    ax, ay = a
    bx, by = b
    ex, ey = bx - ax, by - ay
    len2 = ex * ex + ey * ey
    for y in range(H):
        for x in range(W):
            if not row_min <= y <= row_max:
                continue
            px, py = x - ax, y - ay
            t = px * ex + py * ey
            if len2 == 0 or t <= 0:
                hit = px * px + py * py <= r * r
            elif t >= len2:
                hit = (x - bx) ** 2 + (y - by) ** 2 <= r * r
            else:
                hit = (px * ey - py * ex) ** 2 <= r * r * len2
            out[y, x] = 7 if hit else 0
    return out


def test_compiled_backend_selected_when_built():
    assert kernels.BACKEND in BACKENDS
    assert "python" in BACKENDS


@pytest.mark.parametrize("backend", BACKENDS)
def test_fill_capsule_matches_pixel_loop(backend):
    rng = np.random.default_rng(0)
    with kernels.use_backend(backend):
        for _ in range(40):
            H, W = rng.integers(4, 20, size=2)
            a = tuple(int(v) for v in rng.integers(-3, 22, size=2))
            b = tuple(int(v) for v in rng.integers(-3, 22, size=2))
            r = int(rng.integers(0, 5))
            lo, hi = sorted(int(v) for v in rng.integers(-2, 22, size=2))
            out = np.zeros((H, W), np.uint8)
            kernels.fill_capsule(out, a, b, r, 7, lo, hi)
            np.testing.assert_array_equal(out, capsule_oracle(H, W, a, b, r, lo, hi))


@pytest.mark.parametrize("backend", BACKENDS)
def test_remap_and_error_position(backend):
    lab = np.array([[1, 2], [255, 0]], np.uint8)
    with kernels.use_backend(backend):
        out, i, j = kernels.remap(lab, [0, 1, 1])
        assert (i, j) == (-1, -1)
        np.testing.assert_array_equal(out, [[1, 1], [255, 0]])
        _, i, j = kernels.remap(np.array([[0, 0], [0, 9]], np.uint8), [0, 1])
        assert (i, j) == (1, 1)


@pytest.mark.parametrize("backend", BACKENDS)
def test_adjacency_matches_oracle(backend):
    rng = np.random.default_rng(1)
    with kernels.use_backend(backend):
        for _ in range(30):
            lab = rng.integers(0, 5, size=(7, 9)).astype(np.uint8)
            lab[rng.random(lab.shape) < 0.1] = 255
            np.testing.assert_array_equal(kernels.adjacency(lab, 5), adjacency_oracle(lab.tolist(), 5))


@pytest.mark.parametrize("backend", BACKENDS)
def test_confusion_matches_oracle(backend):
    rng = np.random.default_rng(2)
    with kernels.use_backend(backend):
        for _ in range(30):
            gt = rng.integers(0, 4, size=(6, 6))
            gt[rng.random(gt.shape) < 0.2] = 255
            pred = rng.integers(0, 4, size=(6, 6))
            cm, bad = kernels.confusion(gt, pred, 4)
            assert bad == -1
            np.testing.assert_array_equal(cm, confusion_oracle(pred.tolist(), gt.tolist(), 4))
        _, bad = kernels.confusion(np.array([0, 1, 2]), np.array([0, 5, 1]), 3)
        assert bad == 1


def test_backends_agree_on_random_inputs():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(3)
    lab = rng.integers(0, 12, size=(48, 48)).astype(np.uint8)
    lut = rng.integers(0, 5, size=12)
    res = {}
    for b in BACKENDS:
        with kernels.use_backend(b):
            res[b] = (kernels.remap(lab, lut)[0], kernels.adjacency(lab, 12),
                      kernels.confusion(lab, lab[::-1], 12)[0])
    for x, y in zip(*res.values()):
        np.testing.assert_array_equal(x, y)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        with kernels.use_backend("fortran"):
            pass
