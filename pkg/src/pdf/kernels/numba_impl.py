"""Numba-jitted kernels mirroring numpy_impl function for function.

Same contracts as the reference: float64 accumulation inside, float32 for
persisted outputs, no randomness, deterministic sequential reductions.
Differences from the reference are limited to sub-ulp float64 rounding
(summation order, libm vs vectorized transcendentals), which the float32
output cast almost always absorbs; integer outputs are always identical.

Importing this module raises ImportError when numba is unavailable; the
package then falls back to the numpy reference automatically.
"""

from __future__ import annotations

import numpy as np
import numba as nb

NAME = "numba"

_F = nb.njit(cache=True, fastmath=False)


@_F
def mlp_tanh_tanh(x, w1, b1, w2, b2):
    n, h = w1.shape
    f = w2.shape[1]
    h1 = np.empty(h, dtype=np.float64)
    for j in range(h):
        acc = np.float64(b1[j])
        for i in range(n):
            acc += np.float64(x[i]) * np.float64(w1[i, j])
        h1[j] = np.tanh(acc)
    out = np.empty(f, dtype=np.float32)
    for j in range(f):
        acc = np.float64(b2[j])
        for i in range(h):
            acc += h1[i] * np.float64(w2[i, j])
        out[j] = np.float32(np.tanh(acc))
    return out


@_F
def mlp_tanh_linear(x, w1, b1, w2, b2):
    n, h = w1.shape
    f = w2.shape[1]
    h1 = np.empty(h, dtype=np.float64)
    for j in range(h):
        acc = np.float64(b1[j])
        for i in range(n):
            acc += np.float64(x[i]) * np.float64(w1[i, j])
        h1[j] = np.tanh(acc)
    out = np.empty(f, dtype=np.float32)
    for j in range(f):
        acc = np.float64(b2[j])
        for i in range(h):
            acc += h1[i] * np.float64(w2[i, j])
        out[j] = np.float32(acc)
    return out


@_F
def affine(x, w, b):
    n, m = w.shape
    out = np.empty(m, dtype=np.float32)
    for j in range(m):
        acc = np.float64(b[j])
        for i in range(n):
            acc += np.float64(x[i]) * np.float64(w[i, j])
        out[j] = np.float32(acc)
    return out


@_F
def add_scaled(base, extra, scale):
    d, k = base.shape
    out = np.empty((d, k), dtype=np.float32)
    s = np.float64(scale)
    for i in range(d):
        for j in range(k):
            out[i, j] = np.float32(np.float64(base[i, j]) + s * np.float64(extra[i, j]))
    return out


@_F
def _log_softmax_rows(z):
    d, k = z.shape
    out = np.empty((d, k), dtype=np.float64)
    for i in range(d):
        m = np.float64(z[i, 0])
        for j in range(1, k):
            v = np.float64(z[i, j])
            if v > m:
                m = v
        acc = 0.0
        for j in range(k):
            out[i, j] = np.float64(z[i, j]) - m
            acc += np.exp(out[i, j])
        lse = np.log(acc)
        for j in range(k):
            out[i, j] -= lse
    return out


@_F
def softmax_rows(z):
    logp = _log_softmax_rows(z)
    d, k = logp.shape
    out = np.empty((d, k), dtype=np.float64)
    for i in range(d):
        for j in range(k):
            out[i, j] = np.exp(logp[i, j])
    return out


@_F
def normalized_entropy(z, aggregate):
    d, k = z.shape
    if k == 1:
        return 0.0
    logp = _log_softmax_rows(z)
    logk = np.log(np.float64(k))
    total = 0.0
    best = 0.0
    for i in range(d):
        acc = 0.0
        for j in range(k):
            acc -= np.exp(logp[i, j]) * logp[i, j]
        row = acc / logk
        if row < 0.0:
            row = 0.0
        if row > 1.0:
            row = 1.0
        total += row
        if row > best:
            best = row
    return best if aggregate == 1 else total / d


@_F
def rows_argmax(z):
    d, k = z.shape
    out = np.empty(d, dtype=np.int64)
    for i in range(d):
        bi = 0
        bv = z[i, 0]
        for j in range(1, k):
            if z[i, j] > bv:
                bv = z[i, j]
                bi = j
        out[i] = bi
    return out


@_F
def vote_dim_wise(cands, k):
    n, d = cands.shape
    out = np.empty(d, dtype=np.int64)
    counts = np.empty(k, dtype=np.int64)
    for j in range(d):
        for t in range(k):
            counts[t] = 0
        for i in range(n):
            counts[cands[i, j]] += 1
        best = np.int64(0)
        for t in range(k):
            if counts[t] > best:
                best = counts[t]
        orig = cands[0, j]
        if counts[orig] == best:
            out[j] = orig
        else:
            for t in range(k):
                if counts[t] == best:
                    out[j] = t
                    break
    return out


@_F
def vote_action_wise(cands, k):
    n, d = cands.shape
    keys = np.zeros(n, dtype=np.int64)
    for j in range(d):
        for i in range(n):
            keys[i] = keys[i] * k + cands[i, j]
    best_count = 0
    for i in range(n):
        c = 0
        for j in range(n):
            if keys[j] == keys[i]:
                c += 1
        if c > best_count:
            best_count = c
    # does the original view's tuple tie the mode?
    c0 = 0
    for j in range(n):
        if keys[j] == keys[0]:
            c0 += 1
    if c0 == best_count:
        winner = keys[0]
    else:
        winner = np.int64(0x7FFFFFFFFFFFFFFF)
        for i in range(n):
            c = 0
            for j in range(n):
                if keys[j] == keys[i]:
                    c += 1
            if c == best_count and keys[i] < winner:
                winner = keys[i]
    out = np.empty(d, dtype=np.int64)
    key = winner
    for j in range(d - 1, -1, -1):
        out[j] = key % k
        key //= k
    return out


@_F
def record_loss_grads(feat, base, act, hw1, hb1, hw2, hb2,
                      scale, advantage, kl_weight, gate_open, re_scale):
    fdim = hw1.shape[0]
    hdim = hw1.shape[1]
    odim = hw2.shape[1]
    d, k = base.shape

    f = np.empty(fdim, dtype=np.float64)
    for i in range(fdim):
        f[i] = np.float64(feat[i])

    h1 = np.empty(hdim, dtype=np.float64)
    for j in range(hdim):
        acc = hb1[j]
        for i in range(fdim):
            acc += f[i] * hw1[i, j]
        h1[j] = np.tanh(acc)

    zt = np.empty((d, k), dtype=np.float64)
    s = np.float64(scale)
    for j in range(odim):
        acc = hb2[j]
        for i in range(hdim):
            acc += h1[i] * hw2[i, j]
        zt[j // k, j % k] = np.float64(base[j // k, j % k]) + s * acc

    logq = _log_softmax_rows(zt)
    logp = _log_softmax_rows(base)

    re_loss = 0.0
    for j in range(d):
        re_loss -= np.float64(advantage) * logq[j, act[j]]
    kl_loss = 0.0
    for j in range(d):
        for t in range(k):
            p = np.exp(logp[j, t])
            kl_loss += p * (logp[j, t] - logq[j, t])

    gz = np.zeros((d, k), dtype=np.float64)
    adv = np.float64(advantage) * np.float64(re_scale)
    for j in range(d):
        for t in range(k):
            gz[j, t] = adv * np.exp(logq[j, t])
        gz[j, act[j]] -= adv
    if gate_open:
        kw = np.float64(kl_weight)
        for j in range(d):
            for t in range(k):
                gz[j, t] += kw * (np.exp(logq[j, t]) - np.exp(logp[j, t]))

    ge = np.empty(odim, dtype=np.float64)
    for j in range(odim):
        ge[j] = s * gz[j // k, j % k]
    gw2 = np.empty((hdim, odim), dtype=np.float64)
    gb2 = np.empty(odim, dtype=np.float64)
    for j in range(odim):
        gb2[j] = ge[j]
    for i in range(hdim):
        for j in range(odim):
            gw2[i, j] = h1[i] * ge[j]
    dpre = np.empty(hdim, dtype=np.float64)
    for i in range(hdim):
        acc = 0.0
        for j in range(odim):
            acc += hw2[i, j] * ge[j]
        dpre[i] = acc * (1.0 - h1[i] * h1[i])
    gw1 = np.empty((fdim, hdim), dtype=np.float64)
    gb1 = np.empty(hdim, dtype=np.float64)
    for j in range(hdim):
        gb1[j] = dpre[j]
    for i in range(fdim):
        for j in range(hdim):
            gw1[i, j] = f[i] * dpre[j]
    return re_loss, kl_loss, gw1, gb1, gw2, gb2


@_F
def batch_loss_grads(feats, bases, acts, hw1, hb1, hw2, hb2,
                     scale, advantage, kl_weight, gate_open, re_scale):
    n = feats.shape[0]
    gw1 = np.zeros_like(hw1)
    gb1 = np.zeros_like(hb1)
    gw2 = np.zeros_like(hw2)
    gb2 = np.zeros_like(hb2)
    loss = 0.0
    kw = np.float64(kl_weight) if gate_open else 0.0
    for i in range(n):
        re_l, kl_l, a1, a2, a3, a4 = record_loss_grads(
            feats[i], bases[i], acts[i], hw1, hb1, hw2, hb2,
            scale, advantage, kl_weight, gate_open, re_scale)
        loss += np.float64(re_scale) * re_l + kw * kl_l
        gw1 += a1
        gb1 += a2
        gw2 += a3
        gb2 += a4
    inv = 1.0 / n
    return loss * inv, gw1 * inv, gb1 * inv, gw2 * inv, gb2 * inv


@_F
def render_scene(h_cells, w_cells, cell_px,
                 goal_xy, goal_color,
                 obj_xy, obj_colors, obj_visible,
                 grip_xy, grip_color):
    img = np.zeros((h_cells * cell_px, w_cells * cell_px, 3), dtype=np.float32)

    r0 = goal_xy[1] * cell_px
    c0 = goal_xy[0] * cell_px
    for r in range(r0, r0 + cell_px):
        for c in range(c0, c0 + cell_px):
            for ch in range(3):
                img[r, c, ch] = goal_color[ch]
    for i in range(obj_xy.shape[0]):
        if obj_visible[i]:
            r0 = obj_xy[i, 1] * cell_px
            c0 = obj_xy[i, 0] * cell_px
            for r in range(r0, r0 + cell_px):
                for c in range(c0, c0 + cell_px):
                    for ch in range(3):
                        img[r, c, ch] = obj_colors[i, ch]
    r0 = grip_xy[1] * cell_px
    c0 = grip_xy[0] * cell_px
    for r in range(r0, r0 + cell_px):
        for c in range(c0, c0 + cell_px):
            for ch in range(3):
                img[r, c, ch] = grip_color[ch]
    return img


@_F
def shift_image(img, dx, dy):
    h, w, c = img.shape
    out = np.zeros_like(img)
    for r in range(h):
        sr = r - dy
        if sr < 0 or sr >= h:
            continue
        for cc in range(w):
            sc = cc - dx
            if sc < 0 or sc >= w:
                continue
            for ch in range(c):
                out[r, cc, ch] = img[sr, sc, ch]
    return out
