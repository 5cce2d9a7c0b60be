"""Numba kernels for volume rendering a dense voxel grid and its backward pass.

Grid arrays are flat: ``raw[v]`` and ``sh[v, 48]`` with ``v = i + nx*(j + ny*k)``.
Sample ``s`` of a ray sits at ``t_near + (s + u) * (t_far - t_near) / S`` with
``u`` from ``offsets``; its interval length is the distance to the next sample
(the last one runs to ``t_far``).
"""

import math

import numpy as np
from numba import njit, prange

from .sh import basis_into

_INSIDE_EPS = 1e-9
# reassociation lets the 48-wide row loops vectorize; results stay deterministic
FAST = {"reassoc", "contract", "arcp"}


@njit(cache=True, inline="always")
def softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True, inline="always")
def sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, inline="always")
def _axis(p, lo, cell, n):
    u = (p - lo) / cell - 0.5
    if u < 0.0:
        u = 0.0
    if u > n - 1:
        u = n - 1.0
    if n == 1:
        return 0, 0, 0.0
    i0 = int(math.floor(u))
    if i0 > n - 2:
        i0 = n - 2
    return i0, i0 + 1, u - i0


@njit(cache=True, inline="always")
def locate(px, py, pz, bmin, bmax, cell, nx, ny, nz, idx, wts):
    """Fill the 8 corner indices/weights; False when the point is outside the box."""
    if (px < bmin[0] - _INSIDE_EPS or px > bmax[0] + _INSIDE_EPS
            or py < bmin[1] - _INSIDE_EPS or py > bmax[1] + _INSIDE_EPS
            or pz < bmin[2] - _INSIDE_EPS or pz > bmax[2] + _INSIDE_EPS):
        return False
    i0, i1, fx = _axis(px, bmin[0], cell[0], nx)
    j0, j1, fy = _axis(py, bmin[1], cell[1], ny)
    k0, k1, fz = _axis(pz, bmin[2], cell[2], nz)
    c = 0
    for dk in range(2):
        k = k1 if dk else k0
        wz = fz if dk else 1.0 - fz
        for dj in range(2):
            j = j1 if dj else j0
            wy = fy if dj else 1.0 - fy
            for di in range(2):
                i = i1 if di else i0
                wx = fx if di else 1.0 - fx
                idx[c] = i + nx * (j + ny * k)
                wts[c] = wx * wy * wz
                c += 1
    return True


@njit(cache=True, inline="always")
def _sample_t(tn, tf, s, n, u):
    return tn + (s + u) * (tf - tn) / n


@njit(cache=True)
def _trace(o, d, tn, tf, offs, raw, sh, bg, bmin, bmax, cell, nx, ny, nz, min_weight,
           ts, sig, rawd, w, col, active, b):
    """Forward pass for one ray. Fills per-sample buffers; returns (r, g, b, T_final)."""
    S = ts.shape[0]
    idx = np.empty(8, np.int64)
    wts = np.empty(8)
    for s in range(S):
        ts[s] = _sample_t(tn, tf, s, S, offs[s])
    basis_into(d[0], d[1], d[2], b)
    T = 1.0
    cr = 0.0
    cg = 0.0
    cb = 0.0
    for s in range(S):
        t = ts[s]
        delta = (ts[s + 1] if s + 1 < S else tf) - t
        px = o[0] + t * d[0]
        py = o[1] + t * d[1]
        pz = o[2] + t * d[2]
        active[s] = False
        if not locate(px, py, pz, bmin, bmax, cell, nx, ny, nz, idx, wts):
            sig[s] = 0.0
            rawd[s] = 0.0
            w[s] = 0.0
            continue
        r = 0.0
        for c in range(8):
            r += wts[c] * raw[idx[c]]
        rawd[s] = r
        sg = softplus(r)
        sig[s] = sg
        alpha = 1.0 - math.exp(-sg * delta)
        ws = T * alpha
        w[s] = ws
        if ws >= min_weight:
            active[s] = True
            for ch in range(3):
                acc = 0.0
                for c in range(8):
                    row = idx[c]
                    dot = 0.0
                    for k in range(16):
                        dot += sh[row, ch * 16 + k] * b[k]
                    acc += wts[c] * dot
                col[s, ch] = acc + 0.5
            cr += ws * min(max(col[s, 0], 0.0), 1.0)
            cg += ws * min(max(col[s, 1], 0.0), 1.0)
            cb += ws * min(max(col[s, 2], 0.0), 1.0)
        T *= 1.0 - alpha
    for ch in range(3):
        acc = 0.0
        for k in range(16):
            acc += bg[ch * 16 + k] * b[k]
        col_bg = min(max(acc + 0.5, 0.0), 1.0)
        if ch == 0:
            cr += T * col_bg
        elif ch == 1:
            cg += T * col_bg
        else:
            cb += T * col_bg
    return cr, cg, cb, T


@njit(cache=True, inline="always")
def _median_depth(ts, w, tf):
    S = ts.shape[0]
    total = 0.0
    for s in range(S):
        total += w[s]
    if total <= 0.0:
        return 0.0
    target = 0.5 * total
    cum = 0.0
    for s in range(S):
        nxt = cum + w[s]
        if nxt >= target and w[s] > 0.0:
            t1 = ts[s + 1] if s + 1 < S else tf
            return ts[s] + (target - cum) / w[s] * (t1 - ts[s])
        cum = nxt
    return ts[S - 1]


@njit(parallel=True, cache=True)
def render_rays(origins, dirs, tnear, tfar, offsets, raw, sh, bg, bmin, bmax, cell,
                nx, ny, nz, n_samples, min_weight):
    R = origins.shape[0]
    rgb = np.zeros((R, 3))
    depth = np.zeros(R)
    opac = np.zeros(R)
    bcast = offsets.shape[0] == 1
    for r in prange(R):
        ts = np.empty(n_samples)
        sig = np.empty(n_samples)
        rawd = np.empty(n_samples)
        w = np.empty(n_samples)
        col = np.empty((n_samples, 3))
        active = np.empty(n_samples, np.bool_)
        b = np.empty(16)
        offs = offsets[0] if bcast else offsets[r]
        if tfar[r] > tnear[r]:
            cr, cg, cb, T = _trace(origins[r], dirs[r], tnear[r], tfar[r], offs, raw, sh, bg,
                                   bmin, bmax, cell, nx, ny, nz, min_weight,
                                   ts, sig, rawd, w, col, active, b)
            rgb[r, 0] = cr
            rgb[r, 1] = cg
            rgb[r, 2] = cb
            opac[r] = 1.0 - T
            depth[r] = _median_depth(ts, w, tfar[r])
        else:
            basis_into(dirs[r, 0], dirs[r, 1], dirs[r, 2], b)
            for ch in range(3):
                acc = 0.0
                for k in range(16):
                    acc += bg[ch * 16 + k] * b[k]
                rgb[r, ch] = min(max(acc + 0.5, 0.0), 1.0)
    return rgb, depth, opac


@njit(parallel=True, cache=True)
def ray_grads(origins, dirs, tnear, tfar, offsets, raw, sh, bg, bmin, bmax, cell,
              nx, ny, nz, n_samples, min_weight, targets, gscale):
    """Squared-error loss per ray plus per-sample gradients.

    Returns ``(rgb, sq_err, d_raw, d_col, d_bg)`` where ``d_raw[r, s]`` is
    dL/d(raw density at sample s), ``d_col[r, s]`` dL/d(pre-clamp color) and
    ``d_bg[r]`` dL/d(pre-clamp background color). ``gscale`` multiplies the
    residual (2/N for a mean over N terms).
    """
    R = origins.shape[0]
    rgb = np.zeros((R, 3))
    sq = np.zeros(R)
    d_raw = np.zeros((R, n_samples))
    d_col = np.zeros((R, n_samples, 3))
    d_bg = np.zeros((R, 3))
    bcast = offsets.shape[0] == 1
    for r in prange(R):
        ts = np.empty(n_samples)
        sig = np.empty(n_samples)
        rawd = np.empty(n_samples)
        w = np.empty(n_samples)
        col = np.empty((n_samples, 3))
        active = np.empty(n_samples, np.bool_)
        b = np.empty(16)
        offs = offsets[0] if bcast else offsets[r]
        g = np.empty(3)
        if tfar[r] > tnear[r]:
            cr, cgr, cb, T = _trace(origins[r], dirs[r], tnear[r], tfar[r], offs, raw, sh, bg,
                                    bmin, bmax, cell, nx, ny, nz, min_weight,
                                    ts, sig, rawd, w, col, active, b)
        else:
            T = 1.0
            cr = 0.0
            cgr = 0.0
            cb = 0.0
            basis_into(dirs[r, 0], dirs[r, 1], dirs[r, 2], b)
            for s in range(n_samples):
                active[s] = False
                sig[s] = 0.0
                w[s] = 0.0
            acc0 = 0.0
            acc1 = 0.0
            acc2 = 0.0
            for k in range(16):
                acc0 += bg[k] * b[k]
                acc1 += bg[16 + k] * b[k]
                acc2 += bg[32 + k] * b[k]
            cr = T * min(max(acc0 + 0.5, 0.0), 1.0)
            cgr = T * min(max(acc1 + 0.5, 0.0), 1.0)
            cb = T * min(max(acc2 + 0.5, 0.0), 1.0)
        rgb[r, 0] = cr
        rgb[r, 1] = cgr
        rgb[r, 2] = cb
        e0 = cr - targets[r, 0]
        e1 = cgr - targets[r, 1]
        e2 = cb - targets[r, 2]
        sq[r] = e0 * e0 + e1 * e1 + e2 * e2
        g[0] = gscale * e0
        g[1] = gscale * e1
        g[2] = gscale * e2
        # background
        for ch in range(3):
            acc = 0.0
            for k in range(16):
                acc += bg[ch * 16 + k] * b[k]
            if 0.0 < acc + 0.5 < 1.0:
                d_bg[r, ch] = g[ch] * T
        if not (tfar[r] > tnear[r]):
            continue
        # S_i = C - sum_{j<=i} w_j c_j, the radiance arriving from behind sample i
        s0 = cr
        s1 = cgr
        s2 = cb
        Tcur = 1.0
        for s in range(n_samples):
            t = ts[s]
            delta = (ts[s + 1] if s + 1 < n_samples else tfar[r]) - t
            Tnext = Tcur * math.exp(-sig[s] * delta)
            if active[s]:
                c0 = min(max(col[s, 0], 0.0), 1.0)
                c1 = min(max(col[s, 1], 0.0), 1.0)
                c2 = min(max(col[s, 2], 0.0), 1.0)
                s0 -= w[s] * c0
                s1 -= w[s] * c1
                s2 -= w[s] * c2
                dsig = delta * (g[0] * (Tnext * c0 - s0) + g[1] * (Tnext * c1 - s1)
                                + g[2] * (Tnext * c2 - s2))
                for ch in range(3):
                    if 0.0 < col[s, ch] < 1.0:
                        d_col[r, s, ch] = g[ch] * w[s]
            else:
                dsig = -delta * (g[0] * s0 + g[1] * s1 + g[2] * s2)
            if sig[s] > 0.0 or rawd[s] != 0.0:
                d_raw[r, s] = dsig * sigmoid(rawd[s])
            Tcur = Tnext
    return rgb, sq, d_raw, d_col, d_bg


@njit(cache=True, fastmath=FAST)
def scatter_grads(origins, dirs, tnear, tfar, offsets, d_raw, d_col, bmin, bmax, cell,
                  nx, ny, nz, grad_raw, grad_sh, touched):
    """Accumulate per-sample gradients into the grid (serial, fixed order)."""
    R, S = d_raw.shape
    idx = np.empty(8, np.int64)
    wts = np.empty(8)
    b = np.empty(16)
    bcast = offsets.shape[0] == 1
    for r in range(R):
        if not (tfar[r] > tnear[r]):
            continue
        o = origins[r]
        d = dirs[r]
        basis_into(d[0], d[1], d[2], b)
        offs = offsets[0] if bcast else offsets[r]
        for s in range(S):
            gr = d_raw[r, s]
            g0 = d_col[r, s, 0]
            g1 = d_col[r, s, 1]
            g2 = d_col[r, s, 2]
            has_col = g0 != 0.0 or g1 != 0.0 or g2 != 0.0
            if gr == 0.0 and not has_col:
                continue
            t = _sample_t(tnear[r], tfar[r], s, S, offs[s])
            if not locate(o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2],
                          bmin, bmax, cell, nx, ny, nz, idx, wts):
                continue
            for c in range(8):
                v = idx[c]
                wc = wts[c]
                grad_raw[v] += wc * gr
                if has_col:
                    touched[v] = True
                    a0 = wc * g0
                    a1 = wc * g1
                    a2 = wc * g2
                    for k in range(16):
                        grad_sh[v, k] += a0 * b[k]
                        grad_sh[v, 16 + k] += a1 * b[k]
                        grad_sh[v, 32 + k] += a2 * b[k]


@njit(cache=True)
def sample_points(points, raw, sh, bmin, bmax, cell, nx, ny, nz):
    """Activated density and interpolated SH at arbitrary points (0 outside)."""
    P = points.shape[0]
    dens = np.zeros(P)
    out_sh = np.zeros((P, 48))
    idx = np.empty(8, np.int64)
    wts = np.empty(8)
    for p in range(P):
        if not locate(points[p, 0], points[p, 1], points[p, 2], bmin, bmax, cell,
                      nx, ny, nz, idx, wts):
            continue
        r = 0.0
        for c in range(8):
            r += wts[c] * raw[idx[c]]
            for k in range(48):
                out_sh[p, k] += wts[c] * sh[idx[c], k]
        dens[p] = softplus(r)
    return dens, out_sh


@njit(cache=True, fastmath=FAST)
def adam_dense(param, grad, m, v, lr, b1, b2, eps, bc1, bc2):
    """``lr`` is a 1-D array applied cyclically (length 1 = scalar, 48 = per coefficient)."""
    L = lr.shape[0]
    flat_p = param.reshape(-1)
    flat_g = grad.reshape(-1)
    flat_m = m.reshape(-1)
    flat_v = v.reshape(-1)
    for i in range(flat_p.shape[0]):
        g = flat_g[i]
        mi = b1 * flat_m[i] + (1.0 - b1) * g
        vi = b2 * flat_v[i] + (1.0 - b2) * g * g
        flat_m[i] = mi
        flat_v[i] = vi
        flat_p[i] -= lr[i % L] * (mi / bc1) / (math.sqrt(vi / bc2) + eps)
        flat_g[i] = 0.0


@njit(cache=True, fastmath=FAST)
def adam_rows(param, grad, m, v, rows, lr, b1, b2, eps, bc1, bc2, touched):
    """Adam step restricted to ``rows`` of 2-D arrays (per-column ``lr``); zeroes their gradients."""
    C = param.shape[1]
    for q in range(rows.shape[0]):
        r = rows[q]
        touched[r] = False
        for c in range(C):
            g = grad[r, c]
            mi = b1 * m[r, c] + (1.0 - b1) * g
            vi = b2 * v[r, c] + (1.0 - b2) * g * g
            m[r, c] = mi
            v[r, c] = vi
            param[r, c] -= lr[c] * (mi / bc1) / (math.sqrt(vi / bc2) + eps)
            grad[r, c] = 0.0
