"""Pure-numpy reference kernels.

Every kernel accumulates in float64 and casts persisted outputs to float32
at the very end, so the numba mirror (which follows the same op order)
produces bit-identical float32 results in practice. No kernel draws random
numbers; callers pass any sampled values in.

Array conventions: matrices are stored input-major, i.e. a layer mapping
n -> m has weight shape (n, m) and the forward pass is x @ w + b.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


# ---------------------------------------------------------------------------
# Dense forwards
# ---------------------------------------------------------------------------

def mlp_tanh_tanh(x, w1, b1, w2, b2):
    """Two-layer tanh MLP forward; float32 out."""
    h1 = np.tanh(x.astype(np.float64) @ w1.astype(np.float64) + b1.astype(np.float64))
    out = np.tanh(h1 @ w2.astype(np.float64) + b2.astype(np.float64))
    return out.astype(np.float32)


def mlp_tanh_linear(x, w1, b1, w2, b2):
    """Two-layer MLP forward, tanh hidden and linear output; float32 out."""
    h1 = np.tanh(x.astype(np.float64) @ w1.astype(np.float64) + b1.astype(np.float64))
    out = h1 @ w2.astype(np.float64) + b2.astype(np.float64)
    return out.astype(np.float32)


def affine(x, w, b):
    """Single affine layer forward; float32 out."""
    out = x.astype(np.float64) @ w.astype(np.float64) + b.astype(np.float64)
    return out.astype(np.float32)


def add_scaled(base, extra, scale):
    """base + scale * extra in float64, cast back to float32."""
    out = base.astype(np.float64) + float(scale) * extra.astype(np.float64)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Distributional pieces
# ---------------------------------------------------------------------------

def _log_softmax_rows(z):
    """Row-wise stable log-softmax in float64."""
    z = z.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    s = z - m
    lse = np.log(np.exp(s).sum(axis=1, keepdims=True))
    return s - lse


def softmax_rows(z):
    """Row-wise softmax, float64."""
    return np.exp(_log_softmax_rows(z))


def normalized_entropy(z, aggregate):
    """Mean (aggregate=0) or max (aggregate=1) of per-row entropy / log K.

    Each row's Shannon entropy is normalized by log K so the result lies in
    [0, 1] regardless of token count. K = 1 rows carry zero entropy.
    """
    d, k = z.shape
    if k == 1:
        return 0.0
    logp = _log_softmax_rows(z)
    p = np.exp(logp)
    row_h = -(p * logp).sum(axis=1) / np.log(float(k))
    row_h = np.minimum(np.maximum(row_h, 0.0), 1.0)
    return float(row_h.max() if aggregate == 1 else row_h.mean())


def rows_argmax(z):
    """Lowest-index argmax per row, int64."""
    return z.argmax(axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# Voting
# ---------------------------------------------------------------------------

def vote_dim_wise(cands, k):
    """Per-dimension modal token over candidate rows.

    Ties keep row 0's token when it is among the modes, otherwise the
    lowest token index wins. cands has shape (n, d), n >= 1.
    """
    n, d = cands.shape
    out = np.empty(d, dtype=np.int64)
    for j in range(d):
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            counts[cands[i, j]] += 1
        best = counts.max()
        orig = cands[0, j]
        if counts[orig] == best:
            out[j] = orig
        else:
            out[j] = int(np.flatnonzero(counts == best)[0])
    return out


def vote_action_wise(cands, k):
    """Modal whole-tuple over candidate rows.

    Tuples are compared by their base-k encoding with dimension 0 most
    significant, so key order equals lexicographic order. Ties keep row 0's
    tuple when it is among the modes, otherwise the lexicographically
    smallest mode wins.
    """
    n, d = cands.shape
    keys = np.zeros(n, dtype=np.int64)
    for j in range(d):
        keys = keys * k + cands[:, j].astype(np.int64)
    uniq, counts = np.unique(keys, return_counts=True)
    best = counts.max()
    modes = uniq[counts == best]
    if keys[0] in modes:
        return cands[0].astype(np.int64).copy()
    key = int(modes.min())
    out = np.empty(d, dtype=np.int64)
    for j in range(d - 1, -1, -1):
        out[j] = key % k
        key //= k
    return out


# ---------------------------------------------------------------------------
# Delayed-feedback loss and gradients
# ---------------------------------------------------------------------------

def record_loss_grads(feat, base, act, hw1, hb1, hw2, hb2,
                      scale, advantage, kl_weight, gate_open, re_scale):
    """Loss pieces and head gradients for one stored record, float64.

    feat, base come from the frozen policy (any float dtype); the head
    weights hw1..hb2 must be float64 views so finite-difference checks see
    the same arithmetic the caller owns. Returns
    (re_loss, kl_loss, gw1, gb1, gw2, gb2) where the total loss is
    re_scale * re_loss + (kl_weight if gate_open else 0) * kl_loss.

    Forward recomputed here: e = head(feat), z~ = base + scale * e,
    re_loss = -advantage * sum_d log softmax(z~)_d[act_d],
    kl_loss = sum_d KL(softmax(base)_d || softmax(z~)_d).
    """
    f = feat.astype(np.float64)
    zb = base.astype(np.float64)
    d, k = zb.shape

    h1 = np.tanh(f @ hw1 + hb1)
    e = (h1 @ hw2 + hb2).reshape(d, k)
    zt = zb + float(scale) * e

    logq = _log_softmax_rows(zt)
    q = np.exp(logq)
    logp = _log_softmax_rows(zb)
    p = np.exp(logp)

    re_loss = 0.0
    for j in range(d):
        re_loss -= float(advantage) * logq[j, act[j]]
    kl_loss = float((p * (logp - logq)).sum())

    # d(total)/d(zt), rows independent.
    gz = np.zeros((d, k), dtype=np.float64)
    adv = float(advantage) * float(re_scale)
    for j in range(d):
        gz[j] = adv * q[j]
        gz[j, act[j]] -= adv
    if gate_open:
        gz += float(kl_weight) * (q - p)

    ge = float(scale) * gz.reshape(d * k)
    gw2 = np.outer(h1, ge)
    gb2 = ge.copy()
    dh1 = hw2 @ ge
    dpre = dh1 * (1.0 - h1 * h1)
    gw1 = np.outer(f, dpre)
    gb1 = dpre.copy()
    return re_loss, kl_loss, gw1, gb1, gw2, gb2


def batch_loss_grads(feats, bases, acts, hw1, hb1, hw2, hb2,
                     scale, advantage, kl_weight, gate_open, re_scale):
    """Mean loss and mean head gradients over a batch, in index order.

    feats (n, f), bases (n, d, k), acts (n, d). Records are reduced
    sequentially in row order so the result is deterministic. Returns
    (loss_mean, gw1, gb1, gw2, gb2) in float64.
    """
    n = feats.shape[0]
    gw1 = np.zeros_like(hw1)
    gb1 = np.zeros_like(hb1)
    gw2 = np.zeros_like(hw2)
    gb2 = np.zeros_like(hb2)
    loss = 0.0
    kw = float(kl_weight) if gate_open else 0.0
    for i in range(n):
        re_l, kl_l, a1, a2, a3, a4 = record_loss_grads(
            feats[i], bases[i], acts[i], hw1, hb1, hw2, hb2,
            scale, advantage, kl_weight, gate_open, re_scale)
        loss += float(re_scale) * re_l + kw * kl_l
        gw1 += a1
        gb1 += a2
        gw2 += a3
        gb2 += a4
    inv = 1.0 / n
    return loss * inv, gw1 * inv, gb1 * inv, gw2 * inv, gb2 * inv


# ---------------------------------------------------------------------------
# Rendering and augmentation
# ---------------------------------------------------------------------------

def render_scene(h_cells, w_cells, cell_px,
                 goal_xy, goal_color,
                 obj_xy, obj_colors, obj_visible,
                 grip_xy, grip_color):
    """Rasterize a cell grid to (h*px, w*px, 3) float32 in [0, 1].

    Draw order goal, objects, gripper; later layers overwrite. Positions
    are (x, y) = (column, row); invisible objects are skipped.
    """
    img = np.zeros((h_cells * cell_px, w_cells * cell_px, 3), dtype=np.float32)

    def paint(x, y, color):
        r0, c0 = y * cell_px, x * cell_px
        for ch in range(3):
            img[r0:r0 + cell_px, c0:c0 + cell_px, ch] = color[ch]

    paint(int(goal_xy[0]), int(goal_xy[1]), goal_color)
    for i in range(obj_xy.shape[0]):
        if obj_visible[i]:
            paint(int(obj_xy[i, 0]), int(obj_xy[i, 1]), obj_colors[i])
    paint(int(grip_xy[0]), int(grip_xy[1]), grip_color)
    return img


def shift_image(img, dx, dy):
    """Translate by (dx, dy) pixels (x = columns, y = rows), zero fill."""
    h, w, c = img.shape
    out = np.zeros_like(img)
    src_r0, src_r1 = max(0, -dy), min(h, h - dy)
    src_c0, src_c1 = max(0, -dx), min(w, w - dx)
    if src_r0 < src_r1 and src_c0 < src_c1:
        out[src_r0 + dy:src_r1 + dy, src_c0 + dx:src_c1 + dx] = \
            img[src_r0:src_r1, src_c0:src_c1]
    return out
