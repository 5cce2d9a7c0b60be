"""Dense voxel radiance field: trilinear density + SH color, volume rendering, training.

Arrays are indexed ``[k, j, i]`` (z, y, x) so that a C-order flatten is
x-fastest. Densities are stored pre-activation and passed through softplus.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _field_kernels as K
from .errors import DegenerateRay, EmptyBatch, FormatError, ShapeMismatch
from .geometry import Camera, Ray, ray_box_intersect
from .sh import N_COEFFS, band_scale

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-15


@dataclass(eq=False)
class VoxelField:
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    raw_density: np.ndarray  # (nz, ny, nx)
    sh: np.ndarray  # (nz, ny, nx, 48)
    background: np.ndarray = field(default_factory=lambda: np.zeros(N_COEFFS))

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        self.raw_density = np.ascontiguousarray(self.raw_density, dtype=np.float64)
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(N_COEFFS).copy()
        if not np.all(self.bbox_min < self.bbox_max):
            raise ValueError("bbox_min must be < bbox_max componentwise")
        if self.raw_density.ndim != 3 or self.sh.shape != self.raw_density.shape + (N_COEFFS,):
            raise ShapeMismatch("raw_density must be (nz, ny, nx) and sh (nz, ny, nx, 48)")

    @classmethod
    def empty(cls, dims, bbox_min, bbox_max, init_raw_density: float = -2.0) -> "VoxelField":
        nx, ny, nz = (int(d) for d in dims)
        if min(nx, ny, nz) <= 0:
            raise ValueError("dims must be positive")
        return cls(bbox_min, bbox_max, np.full((nz, ny, nx), float(init_raw_density)),
                   np.zeros((nz, ny, nx, N_COEFFS)), np.zeros(N_COEFFS))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.raw_density.shape
        return nx, ny, nz

    @property
    def cell(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / np.array(self.dims)

    def voxel_centers(self) -> np.ndarray:
        """World positions of voxel centers, ``(nz, ny, nx, 3)``."""
        nx, ny, nz = self.dims
        c = self.cell
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        return self.bbox_min + (np.stack([i, j, k], axis=-1) + 0.5) * c

    def copy(self) -> "VoxelField":
        return VoxelField(self.bbox_min.copy(), self.bbox_max.copy(), self.raw_density.copy(),
                          self.sh.copy(), self.background.copy())

    def _kargs(self):
        nx, ny, nz = self.dims
        return (self.raw_density.reshape(-1), self.sh.reshape(-1, N_COEFFS), self.background,
                self.bbox_min, self.bbox_max, self.cell, nx, ny, nz)


@dataclass(eq=False)
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    opacity: np.ndarray  # (H, W)


@dataclass
class TrainConfig:
    iterations: int = 2000
    rays_per_batch: int = 4096
    learning_rate_density: float = 3.0
    learning_rate_sh: float = 0.01
    learning_rate_background: float = 0.01
    samples_per_ray: int = 128
    seed: int = 0
    # learning-rate multiplier for the view-dependent (l >= 1) SH bands, field and background
    sh_rest_scale: float = 1.0
    # Samples whose compositing weight is below this are not shaded (0 = exact).
    min_weight: float = 1e-4
    stratified: bool = True
    log_every: int = 0

    def __post_init__(self):
        for name in ("rays_per_batch", "learning_rate_density", "learning_rate_sh",
                     "learning_rate_background", "samples_per_ray", "sh_rest_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")


def sample_field(f: VoxelField, points) -> tuple[np.ndarray, np.ndarray]:
    """Density (>= 0) and SH (48,) at world points ``(..., 3)``; zero outside the box."""
    p = np.asarray(points, dtype=np.float64)
    flat = np.ascontiguousarray(p.reshape(-1, 3))
    raw, sh, _, bmin, bmax, cell, nx, ny, nz = f._kargs()
    dens, out_sh = K.sample_points(flat, raw, sh, bmin, bmax, cell, nx, ny, nz)
    return dens.reshape(p.shape[:-1]), out_sh.reshape(p.shape[:-1] + (N_COEFFS,))


def _offsets(n_rays: int, n_samples: int, rng) -> np.ndarray:
    if rng is None:
        return np.full((1, n_samples), 0.5)
    return rng.random((n_rays, n_samples))


def render_rays(f: VoxelField, origins, dirs, t_near, t_far, n_samples: int,
                rng=None, min_weight: float = 0.0):
    """Batched quadrature. ``rng=None`` places samples at stratum midpoints."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    tn = np.ascontiguousarray(t_near, dtype=np.float64).reshape(-1)
    tf = np.ascontiguousarray(t_far, dtype=np.float64).reshape(-1)
    offs = _offsets(len(origins), n_samples, rng)
    return K.render_rays(origins, dirs, tn, tf, offs, *f._kargs(), n_samples, min_weight)


def render_ray(f: VoxelField, ray: Ray, n_samples: int, rng=None, min_weight: float = 0.0):
    """Returns ``(rgb, median_depth, opacity)`` for a single ray."""
    if not ray.t_far > ray.t_near:
        raise DegenerateRay("t_far must exceed t_near")
    rgb, depth, opac = render_rays(f, ray.origin, ray.dir.as_array(), ray.t_near, ray.t_far,
                                   n_samples, rng, min_weight)
    return rgb[0], float(depth[0]), float(opac[0])


def camera_rays(cam: Camera):
    """Origins and unit directions for every pixel center, flattened row-major."""
    dirs = cam.pixel_dirs().reshape(-1, 3)
    origins = np.broadcast_to(cam.center, dirs.shape).copy()
    return origins, dirs


def clip_rays(f: VoxelField, origins, dirs, t_min: float = 0.0):
    tn, tf, hit = ray_box_intersect(origins, dirs, f.bbox_min, f.bbox_max, t_min)
    tn = np.where(hit, tn, 0.0)
    tf = np.where(hit, tf, 0.0)
    return tn, tf


def render_image(f: VoxelField, cam: Camera, n_samples: int = 256, rng=None,
                 min_weight: float = 0.0, chunk: int = 16384) -> RenderOutput:
    origins, dirs = camera_rays(cam)
    tn, tf = clip_rays(f, origins, dirs)
    rgb = np.empty((len(dirs), 3))
    depth = np.empty(len(dirs))
    opac = np.empty(len(dirs))
    for s in range(0, len(dirs), chunk):
        sl = slice(s, s + chunk)
        rgb[sl], depth[sl], opac[sl] = render_rays(f, origins[sl], dirs[sl], tn[sl], tf[sl],
                                                    n_samples, rng, min_weight)
    H, W = cam.height, cam.width
    return RenderOutput(rgb.reshape(H, W, 3), depth.reshape(H, W), opac.reshape(H, W))


def _ray_loss_grads(f, origins, dirs, tn, tf, targets, n_samples, offs, min_weight):
    n = len(origins)
    gscale = 2.0 / (3 * n)
    return K.ray_grads(origins, dirs, tn, tf, offs, *f._kargs(), n_samples, min_weight,
                       targets, gscale)


def loss_and_gradients(f: VoxelField, origins, dirs, t_near, t_far, targets,
                       n_samples: int = 64, rng=None, min_weight: float = 0.0):
    """Mean squared error over rays and channels, with analytic gradients.

    Returns ``(loss, grad_raw_density, grad_sh, grad_background)`` shaped like
    the field's arrays.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    if len(origins) == 0:
        raise EmptyBatch("no rays")
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    targets = np.ascontiguousarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(dirs) != len(origins) or len(targets) != len(origins):
        raise ShapeMismatch("rays and targets must have equal length")
    tn = np.ascontiguousarray(t_near, dtype=np.float64).reshape(-1)
    tf = np.ascontiguousarray(t_far, dtype=np.float64).reshape(-1)
    offs = _offsets(len(origins), n_samples, rng)
    _, sq, d_raw, d_col, d_bg = _ray_loss_grads(f, origins, dirs, tn, tf, targets, n_samples,
                                                offs, min_weight)
    g_raw = np.zeros(f.raw_density.size)
    g_sh = np.zeros((f.raw_density.size, N_COEFFS))
    touched = np.zeros(f.raw_density.size, dtype=bool)
    raw, sh, bg, bmin, bmax, cell, nx, ny, nz = f._kargs()
    K.scatter_grads(origins, dirs, tn, tf, offs, d_raw, d_col, bmin, bmax, cell, nx, ny, nz,
                    g_raw, g_sh, touched)
    g_bg = _background_grad(dirs, d_bg)
    loss = float(sq.sum() / (3 * len(origins)))
    return loss, g_raw.reshape(f.raw_density.shape), g_sh.reshape(f.sh.shape), g_bg


def _background_grad(dirs, d_bg):
    from .sh import sh_basis
    return np.einsum("rc,rk->ck", d_bg, sh_basis(dirs)).reshape(N_COEFFS)


@dataclass
class TrainTrace:
    loss: list = field(default_factory=list)
    psnr: list = field(default_factory=list)


def gather_training_rays(f: VoxelField, cams, images):
    if len(cams) == 0 or len(cams) != len(images):
        raise ShapeMismatch("need matching, non-empty camera and image lists")
    origins, dirs, colors = [], [], []
    for cam, img in zip(cams, images):
        img = np.asarray(img, dtype=np.float64)
        if img.shape != (cam.height, cam.width, 3):
            raise ShapeMismatch(f"image {img.shape} does not match camera "
                                f"{(cam.height, cam.width, 3)}")
        o, d = camera_rays(cam)
        origins.append(o)
        dirs.append(d)
        colors.append(img.reshape(-1, 3))
    origins = np.concatenate(origins)
    dirs = np.concatenate(dirs)
    tn, tf = clip_rays(f, origins, dirs)
    return origins, dirs, tn, tf, np.concatenate(colors)


def train_field(f: VoxelField, cams, images, cfg: TrainConfig):
    """Fit ``f`` to posed images with Adam. Returns ``(new_field, trace)``.

    Density and background use dense Adam; SH rows are updated only when a
    batch touches them (lazy/sparse Adam), which keeps a 64^3 x 48 grid cheap.
    """
    f = f.copy()
    trace = TrainTrace()
    if cfg.iterations == 0:
        gather_training_rays(f, cams, images)
        return f, trace
    origins, dirs, tn, tf, colors = gather_training_rays(f, cams, images)
    rng = np.random.default_rng(cfg.seed)
    S = cfg.samples_per_ray
    b1, b2 = ADAM_BETAS
    raw_flat = f.raw_density.reshape(-1)
    sh_flat = f.sh.reshape(-1, N_COEFFS)
    V = raw_flat.size
    g_raw = np.zeros(V)
    m_raw, v_raw = np.zeros(V), np.zeros(V)
    g_sh = np.zeros((V, N_COEFFS))
    m_sh, v_sh = np.zeros((V, N_COEFFS)), np.zeros((V, N_COEFFS))
    touched = np.zeros(V, dtype=bool)
    m_bg, v_bg = np.zeros(N_COEFFS), np.zeros(N_COEFFS)
    _, _, _, bmin, bmax, cell, nx, ny, nz = f._kargs()
    lr_d = np.array([cfg.learning_rate_density])
    lr_sh = cfg.learning_rate_sh * band_scale(cfg.sh_rest_scale)
    lr_bg = cfg.learning_rate_background * band_scale(cfg.sh_rest_scale)
    B = cfg.rays_per_batch
    for it in range(1, cfg.iterations + 1):
        sel = np.sort(rng.integers(0, len(origins), size=B))  # sorted for cache locality
        o, d, n0, n1, tgt = origins[sel], dirs[sel], tn[sel], tf[sel], colors[sel]
        offs = rng.random((B, S)) if cfg.stratified else np.full((1, S), 0.5)
        _, sq, d_raw, d_col, d_bg = _ray_loss_grads(f, o, d, n0, n1, tgt, S, offs, cfg.min_weight)
        K.scatter_grads(o, d, n0, n1, offs, d_raw, d_col, bmin, bmax, cell, nx, ny, nz,
                        g_raw, g_sh, touched)
        g_bg = _background_grad(d, d_bg)
        bc1, bc2 = 1 - b1 ** it, 1 - b2 ** it
        K.adam_dense(raw_flat, g_raw, m_raw, v_raw, lr_d, b1, b2, ADAM_EPS, bc1, bc2)
        rows = np.flatnonzero(touched)
        K.adam_rows(sh_flat, g_sh, m_sh, v_sh, rows, lr_sh, b1, b2, ADAM_EPS, bc1, bc2, touched)
        K.adam_dense(f.background, g_bg, m_bg, v_bg, lr_bg, b1, b2, ADAM_EPS, bc1, bc2)
        loss = float(sq.sum() / (3 * B))
        trace.loss.append(loss)
        trace.psnr.append(10 * np.log10(1.0 / loss) if loss > 0 else float("inf"))
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("field it %d loss %.3e psnr %.2f", it, loss, trace.psnr[-1])
    return f, trace


# -- VXF1 checkpoints -------------------------------------------------------

_MAGIC = b"VXF1"


def save_vxf(f: VoxelField, path) -> None:
    """Little-endian: magic, dims (3 x u32), bbox (6 x f64), raw density, sh, background (f32)."""
    nx, ny, nz = f.dims
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<3I", nx, ny, nz))
        fh.write(np.concatenate([f.bbox_min, f.bbox_max]).astype("<f8").tobytes())
        fh.write(f.raw_density.astype("<f4").tobytes())
        fh.write(f.sh.astype("<f4").tobytes())
        fh.write(f.background.astype("<f4").tobytes())


def load_vxf(path) -> VoxelField:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise FormatError(f"{path}: not a VXF1 checkpoint")
    nx, ny, nz = struct.unpack_from("<3I", data, 4)
    off = 16
    bbox = np.frombuffer(data, "<f8", 6, off)
    off += 48
    n = nx * ny * nz
    expected = off + 4 * (n + n * N_COEFFS + N_COEFFS)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    raw = np.frombuffer(data, "<f4", n, off).astype(np.float64).reshape(nz, ny, nx)
    off += 4 * n
    sh = np.frombuffer(data, "<f4", n * N_COEFFS, off).astype(np.float64)
    off += 4 * n * N_COEFFS
    bg = np.frombuffer(data, "<f4", N_COEFFS, off).astype(np.float64)
    return VoxelField(bbox[:3].copy(), bbox[3:].copy(), raw, sh.reshape(nz, ny, nx, N_COEFFS), bg)


def with_background(f: VoxelField, background) -> VoxelField:
    return replace(f.copy(), background=np.asarray(background, dtype=np.float64).copy())
