"""Tile-parallel front-to-back compositing of projected Gaussians and its adjoint.

Instances are (tile, splat) pairs sorted by tile, then depth, then splat index;
``tile_start``/``tile_end`` delimit each tile's run. Tiles are independent, so
results do not depend on the thread count.
"""

import math

import numpy as np
from numba import njit, prange

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.999
T_STOP = 1e-4


@njit(cache=True, inline="always")
def _alpha(X, Y, P, j):
    """Alpha of packed instance ``j`` at pixel center (X, Y); ``a = 0`` when below cutoff."""
    dx = X - P[j, 0]
    dy = Y - P[j, 1]
    power = -0.5 * (P[j, 2] * dx * dx + 2.0 * P[j, 3] * dx * dy + P[j, 4] * dy * dy)
    # cheap reject before exp; the margin keeps the exact test below authoritative
    if power > 0.0 or power < P[j, 6]:
        return 0.0, 0.0, dx, dy, False
    g = math.exp(power)
    a = P[j, 5] * g
    clamped = a > ALPHA_MAX
    if clamped:
        a = ALPHA_MAX
    return a, g, dx, dy, clamped


def pack(inst_splat, mean2d, conic, opac, color, depth):
    """Per-instance contiguous rows: mean, conic, opacity, log cutoff, color, depth."""
    s = inst_splat
    P = np.empty((len(s), 11))
    P[:, 0:2] = mean2d[s]
    P[:, 2:5] = conic[s]
    o = opac[s]
    P[:, 5] = o
    P[:, 6] = np.log(ALPHA_MIN / np.maximum(o, 1e-300)) - 1e-9
    P[:, 7:10] = color[s]
    P[:, 10] = depth[s]
    return P


@njit(parallel=True, cache=True)
def forward(tile_start, tile_end, P, bg, W, H, tile, tiles_x):
    rgb = np.zeros((H, W, 3))
    dep = np.zeros((H, W))
    opa = np.zeros((H, W))
    t_final = np.ones((H, W))
    last = np.zeros((H, W), np.int64)
    n_tiles = tile_start.shape[0]
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        j0 = tile_start[t]
        j1 = tile_end[t]
        for py in range(ty * tile, min(H, (ty + 1) * tile)):
            for px in range(tx * tile, min(W, (tx + 1) * tile)):
                X = px + 0.5
                Y = py + 0.5
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                D = 0.0
                end = j0
                for j in range(j0, j1):
                    a, g, dx, dy, cl = _alpha(X, Y, P, j)
                    if a < ALPHA_MIN:
                        continue
                    w = T * a
                    c0 += w * P[j, 7]
                    c1 += w * P[j, 8]
                    c2 += w * P[j, 9]
                    D += w * P[j, 10]
                    T *= 1.0 - a
                    end = j + 1
                    if T < T_STOP:
                        break
                rgb[py, px, 0] = c0 + T * bg[py, px, 0]
                rgb[py, px, 1] = c1 + T * bg[py, px, 1]
                rgb[py, px, 2] = c2 + T * bg[py, px, 2]
                o = 1.0 - T
                opa[py, px] = o
                dep[py, px] = D / o if o > 0.0 else 0.0
                t_final[py, px] = T
                last[py, px] = end
    return rgb, dep, opa, t_final, last


@njit(parallel=True, cache=True)
def backward(tile_start, tile_end, P, bg, W, H, tile, tiles_x, t_final, last, grad_rgb):
    """Per-instance gradients w.r.t. mean2d, conic (a, b, c), opacity and color."""
    M = P.shape[0]
    g_mean = np.zeros((M, 2))
    g_conic = np.zeros((M, 3))
    g_opac = np.zeros(M)
    g_color = np.zeros((M, 3))
    g_bg = np.zeros((H, W, 3))
    n_tiles = tile_start.shape[0]
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        j0 = tile_start[t]
        for py in range(ty * tile, min(H, (ty + 1) * tile)):
            for px in range(tx * tile, min(W, (tx + 1) * tile)):
                X = px + 0.5
                Y = py + 0.5
                gr0 = grad_rgb[py, px, 0]
                gr1 = grad_rgb[py, px, 1]
                gr2 = grad_rgb[py, px, 2]
                T = t_final[py, px]
                g_bg[py, px, 0] = gr0 * T
                g_bg[py, px, 1] = gr1 * T
                g_bg[py, px, 2] = gr2 * T
                acc0 = T * bg[py, px, 0]
                acc1 = T * bg[py, px, 1]
                acc2 = T * bg[py, px, 2]
                for j in range(last[py, px] - 1, j0 - 1, -1):
                    a, g, dx, dy, cl = _alpha(X, Y, P, j)
                    if a < ALPHA_MIN:
                        continue
                    inv = 1.0 / (1.0 - a)
                    Tb = T * inv
                    w = Tb * a
                    cs0 = P[j, 7]
                    cs1 = P[j, 8]
                    cs2 = P[j, 9]
                    g_color[j, 0] += gr0 * w
                    g_color[j, 1] += gr1 * w
                    g_color[j, 2] += gr2 * w
                    dl_da = (gr0 * (Tb * cs0 - acc0 * inv) + gr1 * (Tb * cs1 - acc1 * inv)
                             + gr2 * (Tb * cs2 - acc2 * inv))
                    acc0 += w * cs0
                    acc1 += w * cs1
                    acc2 += w * cs2
                    T = Tb
                    if cl:
                        continue
                    g_opac[j] += dl_da * g
                    dp = dl_da * a
                    q0 = P[j, 2]
                    q1 = P[j, 3]
                    q2 = P[j, 4]
                    g_mean[j, 0] += dp * (q0 * dx + q1 * dy)
                    g_mean[j, 1] += dp * (q1 * dx + q2 * dy)
                    g_conic[j, 0] += dp * (-0.5 * dx * dx)
                    g_conic[j, 1] += dp * (-dx * dy)
                    g_conic[j, 2] += dp * (-0.5 * dy * dy)
    return g_mean, g_conic, g_opac, g_color, g_bg
