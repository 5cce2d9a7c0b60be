"""PSNR and single-scale SSIM on linear [0, 1] images."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeMismatch, TooSmall

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filt(x, g):
    """Separable 'valid' correlation over the first two axes."""
    n = len(g)
    H, W = x.shape[:2]
    y = g[0] * x[: H - n + 1]
    for i in range(1, n):
        y = y + g[i] * x[i: H - n + 1 + i]
    z = g[0] * y[:, : W - n + 1]
    for i in range(1, n):
        z = z + g[i] * y[:, i: W - n + 1 + i]
    return z


def _filt_adjoint(z, g, H, W):
    n = len(g)
    y = np.zeros((z.shape[0], W) + z.shape[2:])
    for i in range(n):
        y[:, i: W - n + 1 + i] += g[i] * z
    x = np.zeros((H, W) + z.shape[2:])
    for i in range(n):
        x[i: H - n + 1 + i] += g[i] * y
    return x


def _as_hwc(a):
    return a[..., None] if a.ndim == 2 else a


def _ssim_terms(a, b):
    a, b = _pair(a, b)
    a, b = _as_hwc(a), _as_hwc(b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs sides >= {SSIM_WINDOW}, got {a.shape[:2]}")
    g = gaussian_window()
    mu_a, mu_b = _filt(a, g), _filt(b, g)
    var_a = _filt(a * a, g) - mu_a ** 2
    var_b = _filt(b * b, g) - mu_b ** 2
    cov = _filt(a * b, g) - mu_a * mu_b
    A1 = 2 * mu_a * mu_b + SSIM_C1
    A2 = 2 * cov + SSIM_C2
    B1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    B2 = var_a + var_b + SSIM_C2
    smap = (A1 * A2) / (B1 * B2)
    return a, b, g, mu_a, mu_b, A1, A2, B1, B2, smap


def ssim(a, b) -> float:
    """Mean SSIM over valid window positions and channels."""
    return float(_ssim_terms(a, b)[-1].mean())


def ssim_and_grad(a, b):
    """SSIM(a, b) and its gradient with respect to ``a``."""
    shape = np.shape(a)
    a, b, g, mu_a, mu_b, A1, A2, B1, B2, smap = _ssim_terms(a, b)
    scale = 1.0 / smap.size
    d_mu = smap * (2 * mu_b / A1 - 2 * mu_a / B1)
    d_var = -smap / B2
    d_cov = 2 * smap / A2
    d_mu_total = (d_mu - 2 * mu_a * d_var - mu_b * d_cov) * scale
    H, W = a.shape[:2]
    grad = (_filt_adjoint(d_mu_total, g, H, W)
            + 2 * a * _filt_adjoint(d_var * scale, g, H, W)
            + b * _filt_adjoint(d_cov * scale, g, H, W))
    return float(smap.mean()), grad.reshape(shape)


@dataclass
class MetricReport:
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    mean_psnr: float = math.nan
    mean_ssim: float = math.nan
    count: int = 0
    # True when some PSNR is infinite; those entries are left out of mean_psnr.
    psnr_has_inf: bool = False
    names: list = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d["psnr"] = [None if math.isinf(p) else p for p in self.psnr]
        d["mean_psnr"] = None if math.isnan(self.mean_psnr) else self.mean_psnr
        return json.dumps(d, indent=2)

    def to_csv(self) -> str:
        rows = ["name,psnr,ssim"]
        names = self.names or [str(i) for i in range(self.count)]
        for n, p, s in zip(names, self.psnr, self.ssim):
            rows.append(f"{n},{p!r},{s!r}")
        return "\n".join(rows) + "\n"


def evaluate(renders, references, names=None) -> MetricReport:
    if len(renders) != len(references):
        raise ShapeMismatch(f"{len(renders)} renders vs {len(references)} references")
    ps = [psnr(r, t) for r, t in zip(renders, references)]
    ss = [ssim(r, t) for r, t in zip(renders, references)]
    finite = [p for p in ps if math.isfinite(p)]
    return MetricReport(
        psnr=ps, ssim=ss,
        mean_psnr=float(np.mean(finite)) if finite else math.nan,
        mean_ssim=float(np.mean(ss)) if ss else math.nan,
        count=len(ps), psnr_has_inf=len(finite) < len(ps),
        names=list(names) if names is not None else [],
    )
