"""Numba kernels for tile-based forward/backward splat compositing.

Per-splat inputs arrive as flat arrays (float32 for training, float64 for the
wide-precision gradient-check mode). All per-contribution arithmetic runs in
float64 regardless of storage dtype.

Both kernels parallelize over tiles. The forward pass writes disjoint pixels,
and the backward pass writes per-(tile, splat) partial rows, so outputs are
bitwise independent of the thread count; the partials are then merged on the
host in fixed list order.

The skip test `alpha < alpha_skip` is evaluated as `power < log(alpha_skip /
sigma_t)` with the threshold precomputed per splat, which avoids the exp()
for the majority of evaluated pixels. The reference renderer applies the same
predicate.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def exp_elementwise(x):
    """libm exp applied per element; keeps the reference renderer's alphas
    bitwise comparable with the scalar kernel math."""
    out = np.empty_like(x)
    xf = x.ravel()
    of = out.ravel()
    for i in range(xf.size):
        of[i] = math.exp(xf[i])
    return out


@njit(cache=True, inline="always")
def _composite_one_pixel(
    ids,
    start,
    end,
    mu2d,
    conic,
    sigma_t,
    skip_power,
    feats,
    depths,
    pxc,
    pyc,
    alpha_clamp,
    t_stop,
    out_feat,
):
    """Front-to-back compositing of one pixel over ids[start:end].

    Writes the 9 feature sums into out_feat and returns
    (alpha, depth, n_processed, final_transmittance).
    """
    for ch in range(9):
        out_feat[ch] = 0.0
    acc_alpha = 0.0
    acc_depth = 0.0
    T = 1.0
    j = start
    while j < end:
        if T < t_stop:
            break
        sid = ids[j]
        dx = pxc - mu2d[sid, 0]
        dy = pyc - mu2d[sid, 1]
        a = conic[sid, 0]
        b = conic[sid, 1]
        c = conic[sid, 2]
        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
        if power > 0.0 or power < skip_power[sid]:
            j += 1
            continue
        alpha = sigma_t[sid] * math.exp(power)
        if alpha > alpha_clamp:
            alpha = alpha_clamp
        w = alpha * T
        for ch in range(9):
            out_feat[ch] += w * feats[sid, ch]
        acc_alpha += w
        acc_depth += w * depths[sid]
        T = T * (1.0 - alpha)
        j += 1
    return acc_alpha, acc_depth, j - start, T


@njit(cache=True, parallel=True)
def forward_tiles(
    ids,
    tile_offsets,
    tiles_x,
    tile_size,
    height,
    width,
    mu2d,
    conic,
    sigma_t,
    skip_power,
    feats,
    depths,
    alpha_clamp,
    t_stop,
    out_feat,
    out_alpha,
    out_depth,
    n_processed,
    final_T,
):
    n_tiles = tile_offsets.shape[0] - 1
    for tile in prange(n_tiles):
        start = tile_offsets[tile]
        end = tile_offsets[tile + 1]
        if start == end:
            continue
        scratch = np.empty(9, dtype=np.float64)
        ty = tile // tiles_x
        tx = tile % tiles_x
        y1 = min((ty + 1) * tile_size, height)
        x1 = min((tx + 1) * tile_size, width)
        for py in range(ty * tile_size, y1):
            for px in range(tx * tile_size, x1):
                alpha, depth, nproc, T = _composite_one_pixel(
                    ids, start, end, mu2d, conic, sigma_t, skip_power, feats, depths,
                    px + 0.5, py + 0.5, alpha_clamp, t_stop, scratch,
                )
                for ch in range(9):
                    out_feat[py, px, ch] = scratch[ch]
                out_alpha[py, px] = alpha
                out_depth[py, px] = depth
                n_processed[py, px] = nproc
                final_T[py, px] = T


@njit(cache=True, parallel=True)
def backward_tiles(
    ids,
    tile_offsets,
    tiles_x,
    tile_size,
    height,
    width,
    mu2d,
    conic,
    sigma_t,
    skip_power,
    feats,
    depths,
    alpha_clamp,
    n_processed,
    final_T,
    grad_feat,
    pair_mu2d,
    pair_conic,
    pair_sigma_t,
    pair_feat,
):
    """Reverse compositing; gradients land in per-(tile, splat) partial rows.

    Row j of each pair_* buffer belongs to list entry ids[j], owned by exactly
    one tile, so parallel tiles never share a write target. Gradients through
    the auxiliary alpha/depth maps are not propagated.
    """
    n_tiles = tile_offsets.shape[0] - 1
    for tile in prange(n_tiles):
        start = tile_offsets[tile]
        end = tile_offsets[tile + 1]
        if start == end:
            continue
        S = np.empty(9, dtype=np.float64)
        g = np.empty(9, dtype=np.float64)
        ty = tile // tiles_x
        tx = tile % tiles_x
        y1 = min((ty + 1) * tile_size, height)
        x1 = min((tx + 1) * tile_size, width)
        for py in range(ty * tile_size, y1):
            for px in range(tx * tile_size, x1):
                has_grad = False
                for ch in range(9):
                    gch = grad_feat[py, px, ch]
                    g[ch] = gch
                    if gch != 0.0:
                        has_grad = True
                if not has_grad:
                    continue
                pxc = px + 0.5
                pyc = py + 0.5
                T_run = final_T[py, px]
                for ch in range(9):
                    S[ch] = 0.0
                j = start + n_processed[py, px] - 1
                while j >= start:
                    sid = ids[j]
                    dx = pxc - mu2d[sid, 0]
                    dy = pyc - mu2d[sid, 1]
                    a = conic[sid, 0]
                    b = conic[sid, 1]
                    c = conic[sid, 2]
                    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                    if power > 0.0 or power < skip_power[sid]:
                        j -= 1
                        continue
                    G = math.exp(power)
                    raw = sigma_t[sid] * G
                    clamped = raw > alpha_clamp
                    alpha = alpha_clamp if clamped else raw
                    T_run = T_run / (1.0 - alpha)  # transmittance in front of this splat
                    g_dot_f = 0.0
                    g_dot_S = 0.0
                    w = alpha * T_run
                    for ch in range(9):
                        g_dot_f += g[ch] * feats[sid, ch]
                        g_dot_S += g[ch] * S[ch]
                        pair_feat[j, ch] += w * g[ch]
                        S[ch] += w * feats[sid, ch]
                    d_alpha = g_dot_f * T_run - g_dot_S / (1.0 - alpha)
                    if not clamped:
                        pair_sigma_t[j] += d_alpha * G
                        d_power = d_alpha * raw
                        pair_mu2d[j, 0] += d_power * (a * dx + b * dy)
                        pair_mu2d[j, 1] += d_power * (b * dx + c * dy)
                        pair_conic[j, 0] += d_power * (-0.5 * dx * dx)
                        pair_conic[j, 1] += d_power * (-dx * dy)
                        pair_conic[j, 2] += d_power * (-0.5 * dy * dy)
                    j -= 1
