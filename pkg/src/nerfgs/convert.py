"""Field -> splats (point cloud from median depths) and splats -> field (refit on renders)."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoSurface, TooFewPoints
from .field import TrainConfig, VoxelField, clip_rays, render_rays, sample_field, train_field
from .splats import SplatScene, rasterize

log = logging.getLogger(__name__)

LOGIT_CAP = 15.0
MIN_OPACITY = 1.0 / 255.0


@dataclass
class N2GConfig:
    n_rays: int = 2_000_000
    opacity_threshold: float = 0.98
    max_depth: float = 1e3
    knn_k: int = 3
    seed: int = 0
    samples_per_ray: int = 256

    def __post_init__(self):
        if self.n_rays <= 0 or self.knn_k < 1 or self.samples_per_ray < 2:
            raise ValueError("n_rays, knn_k and samples_per_ray must be positive")
        if not 0.0 < self.opacity_threshold <= 1.0:
            raise ValueError("opacity_threshold must lie in (0, 1]")
        if not self.max_depth > 0:
            raise ValueError("max_depth must be positive")


@dataclass
class G2NConfig:
    field_dims: tuple = (64, 64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    reuse_field: bool = False
    bbox: tuple | None = None
    init_raw_density: float = -3.0

    def __post_init__(self):
        self.field_dims = tuple(int(v) for v in self.field_dims)
        if len(self.field_dims) != 3 or min(self.field_dims) <= 0:
            raise ValueError("field_dims must be three positive integers")
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)


@dataclass
class PointCloud:
    points: np.ndarray
    density: np.ndarray
    sh: np.ndarray
    report: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)


def _sample_rays(cams, n: int, rng):
    sizes = np.array([c.width * c.height for c in cams])
    pick = rng.integers(0, sizes.sum(), size=n)
    cam_idx = np.searchsorted(np.cumsum(sizes), pick, side="right")
    local = pick - np.concatenate([[0], np.cumsum(sizes)[:-1]])[cam_idx]
    jitter = rng.random((n, 2))
    origins = np.empty((n, 3))
    dirs = np.empty((n, 3))
    for c, cam in enumerate(cams):
        m = cam_idx == c
        if not m.any():
            continue
        row, col = np.divmod(local[m], cam.width)
        px = col + jitter[m, 0]
        py = row + jitter[m, 1]
        d = np.stack([(px - cam.cx) / cam.fx, -(py - cam.cy) / cam.fy, -np.ones(m.sum())], 1)
        d = d @ cam.rotation.T
        dirs[m] = d / np.linalg.norm(d, axis=1, keepdims=True)
        origins[m] = cam.center
    return origins, dirs


def extract_pointcloud(f: VoxelField, cams, cfg: N2GConfig, chunk: int = 65536) -> PointCloud:
    """Surface points at the median depth of high-opacity, non-sky rays."""
    if len(cams) == 0:
        raise ValueError("need at least one camera")
    rng = np.random.default_rng(cfg.seed)
    origins, dirs = _sample_rays(cams, cfg.n_rays, rng)
    tn, tf = clip_rays(f, origins, dirs)
    depth = np.empty(cfg.n_rays)
    opac = np.empty(cfg.n_rays)
    for s in range(0, cfg.n_rays, chunk):
        sl = slice(s, s + chunk)
        _, depth[sl], opac[sl] = render_rays(f, origins[sl], dirs[sl], tn[sl], tf[sl],
                                             cfg.samples_per_ray)
    opaque = opac >= cfg.opacity_threshold
    near = (depth <= cfg.max_depth) & (depth > 0)
    keep = opaque & near
    pts = origins[keep] + depth[keep, None] * dirs[keep]
    dens, sh = sample_field(f, pts)
    report = {"rays_cast": int(cfg.n_rays), "kept": int(keep.sum()),
              "filtered_by_opacity": int((~opaque).sum()),
              "filtered_by_depth": int((opaque & ~near).sum())}
    if not keep.any():
        raise NoSurface("no ray passed the opacity and depth filters")
    return PointCloud(pts, dens, sh, report)


def _exact_dist(p, i, nbr):
    diff = p[nbr] - p[i]
    x, y, z = diff[..., 0], diff[..., 1], diff[..., 2]
    return np.sqrt(x * x + y * y + z * z)


def knn_mean_distance(points, k: int = 3) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest other points.

    The tree proposes candidates; distances are recomputed in one fixed
    formula and ranked by (distance, index), so the result is exact and
    independent of how the tree orders near-ties.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(p)
    if n < k + 1:
        raise TooFewPoints(f"need at least {k + 1} points, got {n}")
    tree = cKDTree(p)
    m = min(k + 2, n)
    _, idx = tree.query(p, k=m)
    idx = idx.reshape(n, m)
    rows = np.arange(n)[:, None]
    d = _exact_dist(p, rows, idx)
    d[idx == rows] = np.inf  # the query point itself
    order = np.lexsort((idx, d), axis=1)
    d = np.take_along_axis(d, order, axis=1)
    out = np.empty(n)
    # conclusive when the k-th distance is clearly below the next candidate's
    sure = d[:, k - 1] < d[:, k] * (1 - 1e-12)
    out[sure] = _ascending_mean(d[sure, :k])
    for i in np.flatnonzero(~sure):
        cand = np.array(tree.query_ball_point(p[i], d[i, k - 1] * (1 + 1e-9) + 1e-300))
        cand = cand[cand != i]
        di = _exact_dist(p, i, cand)
        di = di[np.lexsort((cand, di))]
        out[i] = _ascending_mean(di[None, :k])[0]
    return out


def _ascending_mean(d):
    # explicit left-to-right sum so results do not depend on numpy's reduction order
    total = d[:, 0].copy()
    for j in range(1, d.shape[1]):
        total += d[:, j]
    return total / d.shape[1]


def splats_from_points(pc: PointCloud, knn_k: int, background) -> tuple[SplatScene, dict]:
    scale = 0.5 * knn_mean_distance(pc.points, knn_k)
    scale = np.maximum(scale, 1e-7)  # coincident points would give log(0)
    alpha = -np.expm1(-pc.density * 2.0 * scale)
    keep = alpha >= MIN_OPACITY
    with np.errstate(divide="ignore"):
        logit = np.log(alpha) - np.log1p(-alpha)
    logit = np.minimum(logit, LOGIT_CAP)
    n = int(keep.sum())
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    scene = SplatScene(pc.points[keep], np.repeat(np.log(scale[keep])[:, None], 3, axis=1), rot,
                       logit[keep], pc.sh[keep], background)
    return scene, {"splats": n, "dropped_transparent": int((~keep).sum())}


def nerf_to_gs(f: VoxelField, cams, cfg: N2GConfig, with_report: bool = False):
    """Isotropic splats at extracted surface points, SH copied from the field.

    Opacity is ``1 - exp(-density * 2 * scale)``: the splat diameter is taken
    as the optical path through it. Splats below 1/255 opacity are dropped
    since the rasterizer would skip them everywhere.
    """
    t0 = time.perf_counter()
    pc = extract_pointcloud(f, cams, cfg)
    t1 = time.perf_counter()
    scene, rep = splats_from_points(pc, cfg.knn_k, f.background)
    t2 = time.perf_counter()
    report = {**pc.report, **rep, "config": asdict(cfg),
              "timing": {"extract_s": t1 - t0, "splats_s": t2 - t1}}
    log.info("nerf_to_gs: %d/%d rays kept, %d splats", pc.report["kept"], cfg.n_rays, len(scene))
    return (scene, report) if with_report else scene


def scene_bbox(scene: SplatScene, pad: float = 0.1):
    if len(scene) == 0:
        return None
    ext = 3.0 * np.exp(scene.log_scales.max(axis=1))[:, None]
    lo = (scene.positions - ext).min(axis=0)
    hi = (scene.positions + ext).max(axis=0)
    margin = pad * (hi - lo).max()
    return lo - margin, hi + margin


def gs_to_nerf(scene: SplatScene, cams, cfg: G2NConfig, f0: VoxelField | None = None,
               extra_views=None):
    """Render ``scene`` at ``cams`` and fit (or update ``f0``) on those renders.

    ``extra_views`` is an optional ``(cams, images)`` pair appended to the
    training set. Returns ``(field, renders, trace)``.
    """
    if len(cams) == 0:
        raise ValueError("need at least one camera")
    renders = [rasterize(scene, c).rgb for c in cams]
    if cfg.reuse_field and f0 is not None:
        start = f0.copy()
    else:
        if cfg.bbox is not None:
            lo, hi = cfg.bbox
        elif f0 is not None:
            lo, hi = f0.bbox_min, f0.bbox_max
        else:
            bb = scene_bbox(scene)
            if bb is None:
                raise ValueError("empty scene: G2NConfig.bbox is required")
            lo, hi = bb
        start = VoxelField.empty(cfg.field_dims, lo, hi, cfg.init_raw_density)
    train_cams, train_imgs = list(cams), list(renders)
    if extra_views is not None:
        train_cams += list(extra_views[0])
        train_imgs += list(extra_views[1])
    out, trace = train_field(start, train_cams, train_imgs, cfg.train)
    return out, renders, trace


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isinf(o):
        return None
    raise TypeError(type(o))
