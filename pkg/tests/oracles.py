"""Scalar-loop reference implementations, deliberately written without any
vectorized library calls from the package under test."""

import math

IGNORE = 255


def matvec_rows(x, w):
    """Rows of x (n x a) times w (a x b) as nested lists."""
    return [[sum(x[i][k] * w[k][j] for k in range(len(w))) for j in range(len(w[0]))] for i in range(len(x))]


def linear(x, weight):
    """nn.Linear without bias: y = x W^T, weight given as out x in."""
    return [[sum(row[k] * weight[o][k] for k in range(len(row))) for o in range(len(weight))] for row in x]


def msa_row_oracle(feat, labels, Z, w_s, factor=1):
    """feat: D x h x w nested list at reduced size; labels: full-size raster."""
    D = len(feat)
    h, w = len(feat[0]), len(feat[0][0])
    rows = []
    for z in range(Z):
        pix = [(i, j) for i in range(h) for j in range(w) if labels[i * factor][j * factor] == z]
        if not pix:
            rows.append([0.0] * len(w_s[0]))
            continue
        avg = [sum(feat[d][i][j] for i, j in pix) / len(pix) for d in range(D)]
        mx = [max(feat[d][i][j] for i, j in pix) for d in range(D)]
        rows.append(matvec_rows([avg + mx], w_s)[0])
    return rows


def aux_logits_oracle(f, x):
    """f: D x H x W, x: Z x D -> Z x H x W."""
    D, H, W = len(f), len(f[0]), len(f[0][0])
    return [[[sum(f[d][i][j] * x[z][d] for d in range(D)) for j in range(W)] for i in range(H)] for z in range(len(x))]


def softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def attention_oracle(q, k, v, mask):
    D = len(q[0])
    out = []
    for i in range(len(q)):
        logits = [sum(q[i][d] * k[j][d] for d in range(D)) / math.sqrt(D) for j in range(len(k))]
        a = softmax(logits)
        out.append([sum(a[j] * mask[i][j] * v[j][d] for j in range(len(k))) for d in range(len(v[0]))])
    return out


def static_map_oracle(x_src, x_dst, m, wq, wk, wv):
    return attention_oracle(linear(x_dst, wq), linear(x_src, wk), linear(x_src, wv), m)


def dynamic_map_oracle(x_src, x_dst, s_src, s_dst, wq, wk, wv, w_src, w_dst):
    a, b = linear(s_dst, w_dst), linear(s_src, w_src)
    m = [[sum(a[i][d] * b[j][d] for d in range(len(a[0]))) for j in range(len(b))] for i in range(len(a))]
    return attention_oracle(linear(x_dst, wq), linear(x_src, wk), linear(x_src, wv), m), m


def cos_dist(x, y, floor=1e-8):
    nx = max(math.sqrt(sum(v * v for v in x)), floor)
    ny = max(math.sqrt(sum(v * v for v in y)), floor)
    return 1.0 - sum(a * b for a, b in zip(x, y)) / (nx * ny)


def scr_oracle(x1, x2, m21, m12):
    t1 = sum(cos_dist(a, b) for a, b in zip(x1, m21)) / len(x1)
    t2 = sum(cos_dist(a, b) for a, b in zip(x2, m12)) / len(x2)
    return t1 + t2


def confusion_oracle(pred, gt, Z):
    cm = [[0] * Z for _ in range(Z)]
    for prow, grow in zip(pred, gt):
        for p, g in zip(prow, grow):
            if g != IGNORE:
                cm[g][p] += 1
    return cm


def miou_oracle(cm):
    Z = len(cm)
    ious = []
    for z in range(Z):
        inter = cm[z][z]
        union = sum(cm[z]) + sum(cm[r][z] for r in range(Z)) - inter
        if union:
            ious.append(inter / union)
    return sum(ious) / len(ious) if ious else 0.0


def mean_acc_oracle(cm):
    accs = [cm[z][z] / sum(cm[z]) for z in range(len(cm)) if sum(cm[z])]
    return sum(accs) / len(accs) if accs else 0.0


def adjacency_oracle(labels, Z):
    H, W = len(labels), len(labels[0])
    adj = [[0] * Z for _ in range(Z)]
    for i in range(H):
        for j in range(W):
            a = labels[i][j]
            if a == IGNORE:
                continue
            for di, dj in ((0, 1), (1, 0)):
                ii, jj = i + di, j + dj
                if ii < H and jj < W and labels[ii][jj] != IGNORE:
                    b = labels[ii][jj]
                    adj[a][b] = adj[b][a] = 1
    return adj
