"""Pure numpy versions of the compiled kernels, same signatures and results."""

import numpy as np


def fill_capsule(out, ax, ay, bx, by, radius, value, row_min, row_max):
    H, W = out.shape
    y0 = max(min(ay, by) - radius, row_min, 0)
    y1 = min(max(ay, by) + radius, row_max, H - 1)
    x0 = max(min(ax, bx) - radius, 0)
    x1 = min(max(ax, bx) + radius, W - 1)
    if y1 < y0 or x1 < x0:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.int64)
    ex, ey = bx - ax, by - ay
    len2 = ex * ex + ey * ey
    px, py = xs - ax, ys - ay
    t = px * ex + py * ey
    r2 = radius * radius
    d_a = px * px + py * py
    d_b = (xs - bx) ** 2 + (ys - by) ** 2
    cross = px * ey - py * ex
    if len2 == 0:
        hit = d_a <= r2
    else:
        hit = np.where(t <= 0, d_a <= r2,
                       np.where(t >= len2, d_b <= r2, cross * cross <= r2 * len2))
    out[y0:y1 + 1, x0:x1 + 1][hit] = value


def remap(labels, lut, ignore):
    labels = np.asarray(labels)
    keep = labels != ignore
    bad = keep & (labels >= len(lut))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        return np.zeros_like(labels, dtype=np.uint8), int(i), int(j)
    out = np.full(labels.shape, ignore, dtype=np.uint8)
    out[keep] = np.asarray(lut, dtype=np.int64)[labels[keep]]
    return out, -1, -1


def adjacency(labels, Z, ignore):
    labels = np.asarray(labels).astype(np.int64)
    adj = np.zeros((Z, Z), dtype=np.uint8)
    valid = (labels != ignore) & (labels < Z)
    for a, b, va, vb in (
        (labels[:, :-1], labels[:, 1:], valid[:, :-1], valid[:, 1:]),
        (labels[:-1, :], labels[1:, :], valid[:-1, :], valid[1:, :]),
    ):
        both = va & vb
        adj[a[both], b[both]] = 1
        adj[b[both], a[both]] = 1
    return adj


def confusion(gt, pred, Z, ignore):
    gt = np.asarray(gt, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    keep = gt != ignore
    bad = keep & ((gt < 0) | (gt >= Z) | (pred < 0) | (pred >= Z))
    if bad.any():
        return np.zeros((Z, Z), dtype=np.int64), int(np.flatnonzero(bad)[0])
    idx = gt[keep] * Z + pred[keep]
    cm = np.bincount(idx, minlength=Z * Z).reshape(Z, Z).astype(np.int64)
    return cm, -1
