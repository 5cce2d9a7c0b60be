"""Real spherical harmonics up to degree 3 (16 basis functions per channel).

Coefficients are stored channel-major, ``(3, 16)`` or flattened to 48 values
(R0..R15, G0..G15, B0..B15). Basis values already include the normalization
constants and carry no Condon-Shortley phase, so ``b1 = C1*y``, ``b2 = C1*z``,
``b3 = C1*x``.

Colors are ``clamp(sum_k c_k b_k(d) + 0.5, 0, 1)`` for both renderers.
"""

from __future__ import annotations

import numpy as np
from numba import njit

N_BASIS = 16
N_COEFFS = 48

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
      1.0925484305920792, 0.5462742152960396)
C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
      0.3731763325901154, 0.4570457994644658, 1.445305721320277,
      0.5900435899266435)


def sh_basis(dirs) -> np.ndarray:
    """Basis values for unit directions of shape ``(..., 3)`` -> ``(..., 16)``."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty(d.shape[:-1] + (N_BASIS,))
    out[..., 0] = C0
    out[..., 1] = C1 * y
    out[..., 2] = C1 * z
    out[..., 3] = C1 * x
    out[..., 4] = C2[0] * x * y
    out[..., 5] = C2[1] * y * z
    out[..., 6] = C2[2] * (3.0 * zz - 1.0)
    out[..., 7] = C2[3] * x * z
    out[..., 8] = C2[4] * (xx - yy)
    out[..., 9] = C3[0] * y * (3.0 * xx - yy)
    out[..., 10] = C3[1] * x * y * z
    out[..., 11] = C3[2] * y * (5.0 * zz - 1.0)
    out[..., 12] = C3[3] * z * (5.0 * zz - 3.0)
    out[..., 13] = C3[4] * x * (5.0 * zz - 1.0)
    out[..., 14] = C3[5] * z * (xx - yy)
    out[..., 15] = C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs) -> np.ndarray:
    """Partial derivatives of each basis polynomial, shape ``(..., 16, 3)``.

    These are derivatives of the polynomial expressions in :func:`sh_basis`
    with x, y, z treated as independent. Only the component tangent to the
    sphere is meaningful; callers project with ``(I - d d^T) / |v|``.
    """
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    g = np.zeros(d.shape[:-1] + (N_BASIS, 3))
    g[..., 1, 1] = C1
    g[..., 2, 2] = C1
    g[..., 3, 0] = C1
    g[..., 4, 0] = C2[0] * y
    g[..., 4, 1] = C2[0] * x
    g[..., 5, 1] = C2[1] * z
    g[..., 5, 2] = C2[1] * y
    g[..., 6, 2] = 6.0 * C2[2] * z
    g[..., 7, 0] = C2[3] * z
    g[..., 7, 2] = C2[3] * x
    g[..., 8, 0] = 2.0 * C2[4] * x
    g[..., 8, 1] = -2.0 * C2[4] * y
    g[..., 9, 0] = 6.0 * C3[0] * x * y
    g[..., 9, 1] = 3.0 * C3[0] * (xx - yy)
    g[..., 10, 0] = C3[1] * y * z
    g[..., 10, 1] = C3[1] * x * z
    g[..., 10, 2] = C3[1] * x * y
    g[..., 11, 1] = C3[2] * (5.0 * zz - 1.0)
    g[..., 11, 2] = 10.0 * C3[2] * y * z
    g[..., 12, 2] = C3[3] * (15.0 * zz - 3.0)
    g[..., 13, 0] = C3[4] * (5.0 * zz - 1.0)
    g[..., 13, 2] = 10.0 * C3[4] * x * z
    g[..., 14, 0] = 2.0 * C3[5] * x * z
    g[..., 14, 1] = -2.0 * C3[5] * y * z
    g[..., 14, 2] = C3[5] * (xx - yy)
    g[..., 15, 0] = 3.0 * C3[6] * (xx - yy)
    g[..., 15, 1] = -6.0 * C3[6] * x * y
    return g


def sh_raw(coeffs, dirs) -> np.ndarray:
    """Unclamped ``sum_k c_k b_k(d)`` per channel (no offset).

    ``coeffs`` is ``(..., 48)`` or ``(..., 3, 16)``; broadcasts against dirs.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    c = c.reshape(c.shape[:-1] + (3, N_BASIS)) if c.shape[-1] == N_COEFFS else c
    b = sh_basis(dirs)
    return np.einsum("...ck,...k->...c", c, b)


def sh_eval(coeffs, dirs) -> np.ndarray:
    """RGB in [0, 1] for SH coefficients seen along unit direction(s)."""
    return np.clip(sh_raw(coeffs, dirs) + 0.5, 0.0, 1.0)


def rgb_to_sh_dc(rgb) -> np.ndarray:
    """Coefficients (48,) whose evaluation is the constant color ``rgb``."""
    out = np.zeros((3, N_BASIS))
    out[:, 0] = (np.asarray(rgb, dtype=np.float64) - 0.5) / C0
    return out.reshape(N_COEFFS)


@njit(cache=True, inline="always")
def basis_into(x, y, z, out):
    xx = x * x
    yy = y * y
    zz = z * z
    out[0] = 0.28209479177387814
    out[1] = 0.4886025119029199 * y
    out[2] = 0.4886025119029199 * z
    out[3] = 0.4886025119029199 * x
    out[4] = 1.0925484305920792 * x * y
    out[5] = 1.0925484305920792 * y * z
    out[6] = 0.31539156525252005 * (3.0 * zz - 1.0)
    out[7] = 1.0925484305920792 * x * z
    out[8] = 0.5462742152960396 * (xx - yy)
    out[9] = 0.5900435899266435 * y * (3.0 * xx - yy)
    out[10] = 2.890611442640554 * x * y * z
    out[11] = 0.4570457994644658 * y * (5.0 * zz - 1.0)
    out[12] = 0.3731763325901154 * z * (5.0 * zz - 3.0)
    out[13] = 0.4570457994644658 * x * (5.0 * zz - 1.0)
    out[14] = 1.445305721320277 * z * (xx - yy)
    out[15] = 0.5900435899266435 * x * (xx - 3.0 * yy)


def band_scale(rest: float) -> np.ndarray:
    """Per-coefficient multipliers: 1 on the l = 0 terms, ``rest`` on l >= 1 (channel-major)."""
    w = np.full(N_COEFFS, float(rest))
    w[::16] = 1.0
    return w
