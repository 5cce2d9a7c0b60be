"""Gaussian splat scenes: projection, tile rasterization, analytic backward, fine-tuning.

Splats are stored struct-of-arrays in :class:`SplatScene`. Opacity is a logit,
scales are logs, rotations are ``(w, x, y, z)`` quaternions normalized on use.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _raster_kernels as RK
from .errors import FormatError, MalformedRegion, ShapeMismatch, UnknownId
from .field import RenderOutput, TrainTrace
from .geometry import Camera, Quaternion, check_sh, quat_to_matrix_batch, quat_to_matrix_vjp
from .metrics import ssim_and_grad
from .optim import Adam
from .sh import N_COEFFS, band_scale, sh_basis, sh_basis_grad

log = logging.getLogger(__name__)

TILE = 16
DILATION = 0.3
NEAR = 0.01
DET_MIN = 1e-12


@dataclass
class Splat:
    position: np.ndarray
    log_scale: np.ndarray
    rotation: Quaternion
    opacity_logit: float
    sh: np.ndarray


@dataclass(eq=False)
class SplatScene:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    background: np.ndarray = field(default_factory=lambda: np.zeros(N_COEFFS))

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(n, N_COEFFS)
        self.background = check_sh(self.background).copy()

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls, background=None) -> "SplatScene":
        bg = np.zeros(N_COEFFS) if background is None else background
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                   np.zeros((0, N_COEFFS)), bg)

    @classmethod
    def from_splats(cls, splats, background=None) -> "SplatScene":
        if not splats:
            return cls.empty(background)
        bg = np.zeros(N_COEFFS) if background is None else background
        return cls(
            np.array([s.position for s in splats], dtype=np.float64),
            np.array([s.log_scale for s in splats], dtype=np.float64),
            np.array([s.rotation.as_array() if isinstance(s.rotation, Quaternion)
                      else s.rotation for s in splats], dtype=np.float64),
            np.array([s.opacity_logit for s in splats], dtype=np.float64),
            np.array([check_sh(s.sh) for s in splats]),
            bg,
        )

    def splat(self, i: int) -> Splat:
        return Splat(self.positions[i].copy(), self.log_scales[i].copy(),
                     Quaternion(*self.rotations[i]), float(self.opacity_logits[i]),
                     self.sh[i].copy())

    @property
    def splats(self) -> list[Splat]:
        return [self.splat(i) for i in range(len(self))]

    @property
    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def copy(self) -> "SplatScene":
        return SplatScene(self.positions.copy(), self.log_scales.copy(), self.rotations.copy(),
                          self.opacity_logits.copy(), self.sh.copy(), self.background.copy())

    def take(self, idx) -> "SplatScene":
        idx = np.asarray(idx, dtype=np.int64)
        return SplatScene(self.positions[idx], self.log_scales[idx], self.rotations[idx],
                          self.opacity_logits[idx], self.sh[idx], self.background.copy())

    def params(self) -> dict:
        return {"positions": self.positions, "log_scales": self.log_scales,
                "rotations": self.rotations, "opacity_logits": self.opacity_logits,
                "sh": self.sh, "background": self.background}


@dataclass
class FinetuneConfig:
    iterations: int = 1000
    lr_position: float = 2e-4
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 2.5e-2
    lr_sh: float = 2.5e-3
    lr_background: float = 2.5e-3
    # multiplier on the sh and background learning rates for the l >= 1 bands
    sh_rest_scale: float = 1.0
    loss_lambda: float = 0.2
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_sh",
                     "lr_background", "sh_rest_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.loss_lambda <= 1.0:
            raise ValueError("loss_lambda must lie in [0, 1]")


# -- projection --------------------------------------------------------------

@dataclass
class Projection:
    """Per-splat screen-space quantities plus what the backward pass needs."""
    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    visible: np.ndarray
    radius: np.ndarray
    n_culled: int
    n_singular: int
    # cached intermediates
    pc: np.ndarray
    W: np.ndarray
    J: np.ndarray
    R: np.ndarray
    qn: np.ndarray
    s2: np.ndarray
    sigma3: np.ndarray
    view_dir: np.ndarray
    view_dist: np.ndarray
    color_raw: np.ndarray


def project_splats(scene: SplatScene, cam: Camera) -> Projection:
    n = len(scene)
    W = cam.rotation.T
    pc = (scene.positions - cam.center) @ W.T
    depth = -pc[:, 2]
    in_front = depth > NEAR
    d = np.where(in_front, depth, 1.0)
    x, y = pc[:, 0], pc[:, 1]
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / d
    J[:, 0, 2] = cam.fx * x / d ** 2
    J[:, 1, 1] = -cam.fy / d
    J[:, 1, 2] = -cam.fy * y / d ** 2
    qnorm = np.linalg.norm(scene.rotations, axis=1, keepdims=True)
    qn = scene.rotations / np.where(qnorm > 0, qnorm, 1.0)
    R = quat_to_matrix_batch(qn)
    s2 = np.exp(2.0 * scene.log_scales)
    sigma3 = (R * s2[:, None, :]) @ R.transpose(0, 2, 1)
    M = J @ W
    cov = M @ sigma3 @ M.transpose(0, 2, 1)
    cov[:, 0, 0] += DILATION
    cov[:, 1, 1] += DILATION
    mean2d = np.stack([cam.cx + cam.fx * x / d, cam.cy - cam.fy * y / d], axis=1)
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    singular = in_front & (det <= DET_MIN)
    det_safe = np.where(det > DET_MIN, det, 1.0)
    conic = np.stack([c / det_safe, -b / det_safe, a / det_safe], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    r3 = 3.0 * np.sqrt(lam_max)
    on_screen = ((mean2d[:, 0] + r3 > 0) & (mean2d[:, 0] - r3 < cam.width)
                 & (mean2d[:, 1] + r3 > 0) & (mean2d[:, 1] - r3 < cam.height))
    opac = scene.opacities
    # farthest reach of alpha >= 1/255 along the major axis
    reach = np.sqrt(2.0 * lam_max * np.log(np.maximum(255.0 * opac, 1.0)))
    visible = in_front & on_screen & ~singular & (255.0 * opac > 1.0)
    v = scene.positions - cam.center
    dist = np.linalg.norm(v, axis=1)
    vdir = v / np.where(dist > 0, dist, 1.0)[:, None]
    color_raw = np.einsum("nck,nk->nc", scene.sh.reshape(n, 3, 16), sh_basis(vdir))
    color = np.clip(color_raw + 0.5, 0.0, 1.0)
    n_culled = int(np.sum(~(in_front & on_screen)))
    return Projection(mean2d, cov, conic, depth, color, visible, reach, n_culled,
                      int(singular.sum()), pc, W, J, R, qn, s2, sigma3, vdir, dist, color_raw)


def project_splat(s: Splat, cam: Camera):
    """``(mean2d, cov2d, depth)`` for one splat, or ``None`` when culled."""
    p = project_splats(SplatScene.from_splats([s]), cam)
    if p.depth[0] <= NEAR or p.n_culled:
        return None
    return p.mean2d[0], p.cov2d[0], float(p.depth[0])


# -- rasterization -----------------------------------------------------------

@dataclass
class RasterState:
    proj: Projection
    tile_start: np.ndarray
    tile_end: np.ndarray
    inst_splat: np.ndarray
    tiles_x: int
    bg_raw: np.ndarray
    bg_basis: np.ndarray
    t_final: np.ndarray
    last: np.ndarray
    packed: np.ndarray

    @property
    def n_singular(self) -> int:
        return self.proj.n_singular


def _bin(proj: Projection, cam: Camera):
    tiles_x = (cam.width + TILE - 1) // TILE
    tiles_y = (cam.height + TILE - 1) // TILE
    vis = np.flatnonzero(proj.visible)
    m = proj.mean2d[vis]
    r = proj.radius[vis]
    x0 = np.clip(np.floor((m[:, 0] - r) / TILE), 0, tiles_x - 1).astype(np.int64)
    x1 = np.clip(np.floor((m[:, 0] + r) / TILE), 0, tiles_x - 1).astype(np.int64)
    y0 = np.clip(np.floor((m[:, 1] - r) / TILE), 0, tiles_y - 1).astype(np.int64)
    y1 = np.clip(np.floor((m[:, 1] + r) / TILE), 0, tiles_y - 1).astype(np.int64)
    nx, ny = x1 - x0 + 1, y1 - y0 + 1
    counts = nx * ny
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(vis)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tx = x0[owner] + local % nx[owner]
    ty = y0[owner] + local // nx[owner]
    tile_id = ty * tiles_x + tx
    splat_id = vis[owner]
    order = np.lexsort((splat_id, proj.depth[splat_id], tile_id))
    tile_id = tile_id[order]
    inst = np.ascontiguousarray(splat_id[order])
    n_tiles = tiles_x * tiles_y
    start = np.searchsorted(tile_id, np.arange(n_tiles), side="left")
    end = np.searchsorted(tile_id, np.arange(n_tiles), side="right")
    return start.astype(np.int64), end.astype(np.int64), inst.astype(np.int64), tiles_x


def _background(scene: SplatScene, cam: Camera, basis=None):
    if basis is None:
        basis = sh_basis(cam.pixel_dirs())
    raw = basis @ scene.background.reshape(3, 16).T
    return raw, basis


def _forward(scene: SplatScene, cam: Camera, bg_basis=None):
    proj = project_splats(scene, cam)
    start, end, inst, tiles_x = _bin(proj, cam)
    bg_raw, bg_basis = _background(scene, cam, bg_basis)
    bg = np.clip(bg_raw + 0.5, 0.0, 1.0)
    packed = RK.pack(inst, proj.mean2d, proj.conic, scene.opacities, proj.color, proj.depth)
    rgb, dep, opa, t_final, last = RK.forward(start, end, packed, bg, cam.width, cam.height,
                                              TILE, tiles_x)
    state = RasterState(proj, start, end, inst, tiles_x, bg_raw, bg_basis, t_final, last, packed)
    return RenderOutput(rgb, dep, opa), state


def rasterize(scene: SplatScene, cam: Camera) -> RenderOutput:
    return _forward(scene, cam)[0]


def rasterize_with_state(scene: SplatScene, cam: Camera):
    return _forward(scene, cam)


def rasterize_backward(scene: SplatScene, cam: Camera, grad_rgb, state: RasterState | None = None):
    """Gradients of ``sum(grad_rgb * rgb)`` w.r.t. every scene parameter.

    Returns a dict keyed like :meth:`SplatScene.params`.
    """
    grad_rgb = np.ascontiguousarray(grad_rgb, dtype=np.float64)
    if grad_rgb.shape != (cam.height, cam.width, 3):
        raise ShapeMismatch(f"grad_rgb {grad_rgb.shape} vs camera {(cam.height, cam.width, 3)}")
    if state is None:
        _, state = _forward(scene, cam)
    p = state.proj
    n = len(scene)
    bg = np.clip(state.bg_raw + 0.5, 0.0, 1.0)
    g_mean_i, g_conic_i, g_opac_i, g_color_i, g_bgpix = RK.backward(
        state.tile_start, state.tile_end, state.packed, bg, cam.width, cam.height, TILE,
        state.tiles_x, state.t_final, state.last, grad_rgb)

    inst = state.inst_splat

    def reduce(vals):
        if vals.ndim == 1:
            return np.bincount(inst, weights=vals, minlength=n)
        return np.stack([np.bincount(inst, weights=vals[:, c], minlength=n)
                         for c in range(vals.shape[1])], axis=1)

    g_mean = reduce(g_mean_i)
    g_conic = reduce(g_conic_i)
    g_opac = reduce(g_opac_i)
    g_color = reduce(g_color_i)

    # background
    bmask = (state.bg_raw > -0.5) & (state.bg_raw < 0.5)
    g_bg = ((g_bgpix * bmask).reshape(-1, 3).T @ state.bg_basis.reshape(-1, 16)).reshape(N_COEFFS)

    # color -> sh and view direction
    g_craw = g_color * ((p.color_raw > -0.5) & (p.color_raw < 0.5))
    basis = sh_basis(p.view_dir)
    g_sh = (g_craw[:, :, None] * basis[:, None, :]).reshape(n, N_COEFFS)
    dbasis = sh_basis_grad(p.view_dir)
    g_basis = np.einsum("nc,nck->nk", g_craw, scene.sh.reshape(n, 3, 16))
    g_dir = np.einsum("nk,nki->ni", g_basis, dbasis)
    g_dir -= np.sum(g_dir * p.view_dir, axis=1, keepdims=True) * p.view_dir
    dist = np.where(p.view_dist > 0, p.view_dist, 1.0)
    g_pos = g_dir / dist[:, None]

    # opacity
    o = scene.opacities
    g_logit = g_opac * o * (1 - o)

    # conic -> cov2d
    A, B, C = p.conic[:, 0], p.conic[:, 1], p.conic[:, 2]
    Q = np.stack([np.stack([A, B], -1), np.stack([B, C], -1)], -2)
    GQ = np.stack([np.stack([g_conic[:, 0], 0.5 * g_conic[:, 1]], -1),
                   np.stack([0.5 * g_conic[:, 1], g_conic[:, 2]], -1)], -2)
    G2 = -Q @ GQ @ Q

    # cov2d = M S M^T with M = J W
    M = p.J @ p.W
    G3 = M.transpose(0, 2, 1) @ G2 @ M
    gM = 2.0 * G2 @ M @ p.sigma3
    gJ = gM @ p.W.T

    d = np.where(p.depth > NEAR, p.depth, 1.0)
    x, y = p.pc[:, 0], p.pc[:, 1]
    fx, fy = cam.fx, cam.fy
    g_pc = np.zeros((n, 3))
    g_pc[:, 0] = gJ[:, 0, 2] * fx / d ** 2 + g_mean[:, 0] * fx / d
    g_pc[:, 1] = -gJ[:, 1, 2] * fy / d ** 2 - g_mean[:, 1] * fy / d
    g_pc[:, 2] = (gJ[:, 0, 0] * fx / d ** 2 + gJ[:, 0, 2] * 2 * fx * x / d ** 3
                  - gJ[:, 1, 1] * fy / d ** 2 - gJ[:, 1, 2] * 2 * fy * y / d ** 3
                  + g_mean[:, 0] * fx * x / d ** 2 - g_mean[:, 1] * fy * y / d ** 2)
    g_pos += g_pc @ p.W

    # sigma3 = R diag(s2) R^T
    RtGR = p.R.transpose(0, 2, 1) @ G3 @ p.R
    g_logs = 2.0 * p.s2 * np.einsum("nii->ni", RtGR)
    gR = 2.0 * G3 @ p.R * p.s2[:, None, :]
    g_qn = quat_to_matrix_vjp(p.qn, gR)
    qnorm = np.linalg.norm(scene.rotations, axis=1, keepdims=True)
    g_q = (g_qn - np.sum(g_qn * p.qn, axis=1, keepdims=True) * p.qn) / np.where(qnorm > 0, qnorm, 1.0)

    hidden = ~p.visible
    for g in (g_pos, g_logs, g_q, g_sh):
        g[hidden] = 0.0
    g_logit[hidden] = 0.0
    return {"positions": g_pos, "log_scales": g_logs, "rotations": g_q,
            "opacity_logits": g_logit, "sh": g_sh, "background": g_bg}


# -- fine-tuning -------------------------------------------------------------

def image_loss(render, target, lam: float):
    """``(1 - lam) * L1 + lam * (1 - SSIM)`` and its gradient w.r.t. ``render``."""
    diff = render - target
    l1 = float(np.abs(diff).mean())
    g = (1 - lam) * np.sign(diff) / diff.size
    if lam > 0:
        s, gs = ssim_and_grad(render, target)
        g = g - lam * gs
    else:
        s = 1.0
    return (1 - lam) * l1 + lam * (1 - s), g


def finetune(scene: SplatScene, cams, images, cfg: FinetuneConfig, callback=None):
    """Adam on all splat parameters against posed images; no densification.

    ``callback(iteration, scene)`` runs after every step. Returns ``(scene, trace)``.
    """
    if len(cams) == 0 or len(cams) != len(images):
        raise ShapeMismatch("need matching, non-empty camera and image lists")
    images = [np.asarray(im, dtype=np.float64) for im in images]
    for cam, im in zip(cams, images):
        if im.shape != (cam.height, cam.width, 3):
            raise ShapeMismatch(f"image {im.shape} vs camera {(cam.height, cam.width, 3)}")
    scene = scene.copy()
    trace = TrainTrace()
    if cfg.iterations == 0:
        return scene, trace
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(scene.params(), {
        "positions": cfg.lr_position, "log_scales": cfg.lr_scale,
        "rotations": cfg.lr_rotation, "opacity_logits": cfg.lr_opacity,
        "sh": cfg.lr_sh * band_scale(cfg.sh_rest_scale),
        "background": cfg.lr_background * band_scale(cfg.sh_rest_scale)})
    bases = [sh_basis(c.pixel_dirs()) for c in cams]
    order: list[int] = []
    for it in range(1, cfg.iterations + 1):
        if not order:
            order = list(rng.permutation(len(cams)))
        v = order.pop()
        out, state = _forward(scene, cams[v], bases[v])
        loss, g_img = image_loss(out.rgb, images[v], cfg.loss_lambda)
        grads = rasterize_backward(scene, cams[v], g_img, state)
        opt.step(grads)
        mse = float(np.mean((out.rgb - images[v]) ** 2))
        trace.loss.append(loss)
        trace.psnr.append(10 * np.log10(1 / mse) if mse > 0 else float("inf"))
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("splat it %d loss %.4f psnr %.2f (%d splats)", it, loss, trace.psnr[-1],
                     len(scene))
        if callback is not None:
            callback(it, scene)
    return scene, trace


# -- editing -----------------------------------------------------------------

@dataclass(frozen=True)
class BoxRegion:
    lo: tuple
    hi: tuple


@dataclass(frozen=True)
class SphereRegion:
    center: tuple
    radius: float


@dataclass(frozen=True)
class IdRegion:
    ids: tuple


def select_splats(scene: SplatScene, region) -> list[int]:
    """Ids of splats whose center lies in ``region`` (closed boundaries)."""
    p = scene.positions
    if isinstance(region, BoxRegion):
        lo, hi = np.asarray(region.lo, float), np.asarray(region.hi, float)
        if lo.shape != (3,) or hi.shape != (3,) or not np.all(lo < hi):
            raise MalformedRegion("box needs lo < hi componentwise")
        mask = np.all((p >= lo) & (p <= hi), axis=1)
    elif isinstance(region, SphereRegion):
        c = np.asarray(region.center, float)
        if c.shape != (3,) or not region.radius > 0:
            raise MalformedRegion("sphere needs a 3-D center and radius > 0")
        mask = np.sum((p - c) ** 2, axis=1) <= region.radius ** 2
    elif isinstance(region, IdRegion):
        ids = np.asarray(region.ids, dtype=np.int64).reshape(-1)
        if np.any((ids < 0) | (ids >= len(scene))):
            raise UnknownId(f"ids outside [0, {len(scene)})")
        return sorted(set(int(i) for i in ids))
    else:
        raise MalformedRegion(f"unsupported region {region!r}")
    return [int(i) for i in np.flatnonzero(mask)]


def remove_splats(scene: SplatScene, ids) -> SplatScene:
    ids = np.asarray(list(ids), dtype=np.int64).reshape(-1)
    if np.any((ids < 0) | (ids >= len(scene))):
        raise UnknownId(f"ids outside [0, {len(scene)})")
    if len(np.unique(ids)) != len(ids):
        raise ValueError("ids must be unique")
    keep = np.ones(len(scene), dtype=bool)
    keep[ids] = False
    return scene.take(np.flatnonzero(keep))


# -- PLY ---------------------------------------------------------------------

def _ply_fields():
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(45)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".background.json")


def save_ply(scene: SplatScene, path) -> None:
    """Binary little-endian splat PLY plus ``<stem>.background.json`` sidecar."""
    names = _ply_fields()
    n = len(scene)
    sh = scene.sh.reshape(n, 3, 16)
    cols = [scene.positions, sh[:, :, 0], sh[:, :, 1:].reshape(n, 45),
            scene.opacity_logits[:, None], scene.log_scales, scene.rotations]
    data = np.concatenate(cols, axis=1).astype("<f4") if n else np.zeros((0, len(names)), "<f4")
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {nm}" for nm in names]
    header += ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())
    _sidecar(path).write_text(json.dumps({"background": [float(v) for v in scene.background]}))


def load_ply(path) -> SplatScene:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FormatError(f"{path}: only binary little-endian PLY is supported")
    n = None
    props = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[:1] == ["property"]:
            if parts[1] != "float":
                raise FormatError(f"{path}: property {parts[-1]} is not float32")
            props.append(parts[2])
    if n is None:
        raise FormatError(f"{path}: no vertex element")
    body = raw[end + len(b"end_header\n"):]
    if len(body) != 4 * n * len(props):
        raise FormatError(f"{path}: truncated vertex data")
    arr = np.frombuffer(body, "<f4").reshape(n, len(props)).astype(np.float64)
    col = {nm: i for i, nm in enumerate(props)}
    missing = [nm for nm in _ply_fields() if nm not in col]
    if missing:
        raise FormatError(f"{path}: missing properties {missing[:4]}")

    def get(names):
        return arr[:, [col[nm] for nm in names]]

    dc = get([f"f_dc_{i}" for i in range(3)])
    rest = get([f"f_rest_{i}" for i in range(45)]).reshape(n, 3, 15)
    sh = np.concatenate([dc[:, :, None], rest], axis=2).reshape(n, N_COEFFS)
    side = _sidecar(path)
    bg = np.array(json.loads(side.read_text())["background"]) if side.exists() else np.zeros(N_COEFFS)
    return SplatScene(get(["x", "y", "z"]), get(["scale_0", "scale_1", "scale_2"]),
                      get([f"rot_{i}" for i in range(4)]), get(["opacity"])[:, 0], sh, bg)
