"""Analytic primitive scenes, an exact reference renderer, baking, and camera paths."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DegenerateSpec, FormatError
from .field import RenderOutput, VoxelField, camera_rays
from .geometry import Camera, check_sh, look_at, ray_box_intersect
from .sh import C0, C1, N_COEFFS, rgb_to_sh_dc, sh_raw


@dataclass
class Primitive:
    shape: str  # "sphere" | "box"
    density: float
    sh: np.ndarray
    center: tuple | None = None
    radius: float | None = None
    lo: tuple | None = None
    hi: tuple | None = None

    def __post_init__(self):
        self.sh = check_sh(self.sh)
        if not (np.isfinite(self.density) and self.density >= 0):
            raise ValueError("primitive density must be finite and >= 0")
        if self.shape == "sphere":
            if self.center is None or not (self.radius and self.radius > 0):
                raise ValueError("sphere needs center and radius > 0")
            self.center = tuple(float(v) for v in self.center)
        elif self.shape == "box":
            lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
            if not np.all(lo < hi):
                raise ValueError("box needs lo < hi")
            self.lo, self.hi = tuple(lo.tolist()), tuple(hi.tolist())
        else:
            raise ValueError(f"unknown primitive shape {self.shape!r}")

    @classmethod
    def sphere(cls, center, radius, density, sh):
        return cls("sphere", density, sh, center=center, radius=radius)

    @classmethod
    def box(cls, lo, hi, density, sh):
        return cls("box", density, sh, lo=lo, hi=hi)

    def bounds(self):
        if self.shape == "sphere":
            c = np.array(self.center)
            return c - self.radius, c + self.radius
        return np.array(self.lo), np.array(self.hi)

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if self.shape == "sphere":
            return np.sum((p - np.array(self.center)) ** 2, axis=-1) <= self.radius ** 2
        return np.all((p >= np.array(self.lo)) & (p <= np.array(self.hi)), axis=-1)

    def intersect(self, origins, dirs):
        """Entry/exit distances (clipped at 0) and hit mask for unit-direction rays."""
        if self.shape == "box":
            t0, t1, hit = ray_box_intersect(origins, dirs, self.lo, self.hi, 0.0)
            return t0, t1, hit
        oc = origins - np.array(self.center)
        b = np.sum(oc * dirs, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius ** 2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = np.maximum(-b - sq, 0.0)
        t1 = -b + sq
        return t0, t1, (disc > 0) & (t1 > t0)

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "density": self.density, "sh": self.sh.tolist()}
        if self.shape == "sphere":
            d.update(center=list(self.center), radius=self.radius)
        else:
            d.update(lo=list(self.lo), hi=list(self.hi))
        return d


@dataclass
class AnalyticScene:
    primitives: list = field(default_factory=list)
    background: np.ndarray = field(default_factory=lambda: np.zeros(N_COEFFS))
    bbox: tuple | None = None  # working volume for fields built from this scene

    def __post_init__(self):
        self.background = check_sh(self.background)

    def bounds(self):
        if self.bbox is not None:
            return np.array(self.bbox[0], float), np.array(self.bbox[1], float)
        if not self.primitives:
            return -np.ones(3), np.ones(3)
        lo = np.min([p.bounds()[0] for p in self.primitives], axis=0)
        hi = np.max([p.bounds()[1] for p in self.primitives], axis=0)
        return lo, hi

    def is_disjoint(self) -> bool:
        ps = self.primitives
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                if _overlap(ps[i], ps[j]):
                    return False
        return True

    def to_json(self) -> str:
        d = {"primitives": [p.to_dict() for p in self.primitives],
             "background": self.background.tolist()}
        if self.bbox is not None:
            d["bbox"] = [list(map(float, self.bbox[0])), list(map(float, self.bbox[1]))]
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AnalyticScene":
        try:
            d = json.loads(text)
            prims = [Primitive(**p) for p in d["primitives"]]
            bbox = d.get("bbox")
            return cls(prims, np.array(d["background"]), tuple(bbox) if bbox else None)
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad scene JSON: {e}") from e

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "AnalyticScene":
        return cls.from_json(Path(path).read_text())


def _overlap(a: Primitive, b: Primitive) -> bool:
    if a.shape == "sphere" and b.shape == "sphere":
        return np.linalg.norm(np.subtract(a.center, b.center)) <= a.radius + b.radius
    if a.shape == "box" and b.shape == "box":
        return bool(np.all(np.array(a.lo) <= np.array(b.hi)) and np.all(np.array(b.lo) <= np.array(a.hi)))
    s, bx = (a, b) if a.shape == "sphere" else (b, a)
    c = np.array(s.center)
    closest = np.clip(c, bx.lo, bx.hi)
    return np.linalg.norm(c - closest) <= s.radius


def oracle_query(scene: AnalyticScene, points):
    """Summed density and density-weighted mean SH; SH is zero where density is 0."""
    p = np.asarray(points, dtype=np.float64)
    dens = np.zeros(p.shape[:-1])
    acc = np.zeros(p.shape[:-1] + (N_COEFFS,))
    for prim in scene.primitives:
        inside = prim.contains(p)
        dens += inside * prim.density
        acc += (inside * prim.density)[..., None] * prim.sh
    with np.errstate(invalid="ignore", divide="ignore"):
        sh = np.where(dens[..., None] > 0, acc / np.where(dens > 0, dens, 1.0)[..., None], 0.0)
    return dens, sh


def _bg_color(scene, dirs):
    return np.clip(sh_raw(scene.background, dirs) + 0.5, 0.0, 1.0)


def _render_exact(scene: AnalyticScene, origins, dirs):
    R = len(origins)
    P = len(scene.primitives)
    t0 = np.full((R, P), np.inf)
    t1 = np.full((R, P), np.inf)
    cols = np.zeros((R, P, 3))
    dens = np.zeros(P)
    for k, prim in enumerate(scene.primitives):
        a, b, hit = prim.intersect(origins, dirs)
        t0[:, k] = np.where(hit, a, np.inf)
        t1[:, k] = np.where(hit, b, np.inf)
        cols[:, k] = np.clip(sh_raw(prim.sh, dirs) + 0.5, 0.0, 1.0)
        dens[k] = prim.density
    order = np.argsort(t0, axis=1, kind="stable")
    rows = np.arange(R)[:, None]
    t0, t1, cols = t0[rows, order], t1[rows, order], cols[rows, order]
    dens = dens[order]
    T = np.ones(R)
    rgb = np.zeros((R, 3))
    seg = []
    for k in range(P):
        hit = np.isfinite(t0[:, k])
        length = np.where(hit, t1[:, k] - np.where(hit, t0[:, k], 0.0), 0.0)
        att = np.exp(-dens[:, k] * length)
        w = T * (1 - att)
        rgb += w[:, None] * cols[:, k]
        seg.append((T.copy(), w))
        T = T * att
    rgb += T[:, None] * _bg_color(scene, dirs)
    opacity = 1.0 - T
    # median depth: where the accumulated weight reaches half of the total
    target = 0.5 * opacity
    depth = np.zeros(R)
    done = opacity <= 0
    cum = np.zeros(R)
    for k in range(P):
        Tb, w = seg[k]
        crosses = ~done & (cum + w >= target) & (w > 0)
        if np.any(crosses):
            sig = dens[crosses, k]
            frac = np.clip((target[crosses] - cum[crosses]) / Tb[crosses], 0.0, 1.0 - 1e-300)
            depth[crosses] = t0[crosses, k] - np.log1p(-frac) / sig
            done |= crosses
        cum += w
    return rgb, depth, opacity


def _render_quadrature(scene: AnalyticScene, origins, dirs, n_samples: int, chunk_samples=2 ** 22):
    lo, hi = scene.bounds()
    lo, hi = lo - 1e-6, hi + 1e-6
    tn, tf, hit = ray_box_intersect(origins, dirs, lo, hi, 0.0)
    R = len(origins)
    rgb = np.zeros((R, 3))
    depth = np.zeros(R)
    opac = np.zeros(R)
    bg = _bg_color(scene, dirs)
    prim_cols = [sh_raw(p.sh, dirs) for p in scene.primitives]
    step = max(1, chunk_samples // n_samples)
    for s in range(0, R, step):
        sl = slice(s, min(R, s + step))
        n = sl.stop - sl.start
        h = hit[sl]
        a = np.where(h, tn[sl], 0.0)
        b = np.where(h, tf[sl], 0.0)
        u = (np.arange(n_samples) + 0.5) / n_samples
        t = a[:, None] + u[None, :] * (b - a)[:, None]
        delta = np.diff(np.concatenate([t, b[:, None]], axis=1), axis=1)
        pts = origins[sl, None, :] + t[..., None] * dirs[sl, None, :]
        sig = np.zeros((n, n_samples))
        raw = np.zeros((n, n_samples, 3))
        for prim, pc in zip(scene.primitives, prim_cols):
            inside = prim.contains(pts) * prim.density
            sig += inside
            raw += inside[..., None] * pc[sl, None, :]
        raw = np.where(sig[..., None] > 0, raw / np.where(sig > 0, sig, 1)[..., None], 0.0)
        col = np.clip(raw + 0.5, 0.0, 1.0)
        alpha = 1 - np.exp(-sig * delta)
        trans = np.exp(-np.cumsum(np.concatenate([np.zeros((n, 1)), sig * delta], 1), 1))
        w = trans[:, :-1] * alpha
        T = trans[:, -1]
        rgb[sl] = np.sum(w[..., None] * col, axis=1) + T[:, None] * bg[sl]
        opac[sl] = 1 - T
        cum = np.cumsum(w, axis=1)
        total = cum[:, -1]
        tgt = 0.5 * total
        idx = np.argmax((cum >= tgt[:, None]) & (w > 0), axis=1)
        rr = np.arange(n)
        prev = np.where(idx > 0, cum[rr, np.maximum(idx - 1, 0)], 0.0)
        t_end = np.where(idx + 1 < n_samples, t[rr, np.minimum(idx + 1, n_samples - 1)], b)
        wi = np.where(w[rr, idx] > 0, w[rr, idx], 1.0)
        d = t[rr, idx] + (tgt - prev) / wi * (t_end - t[rr, idx])
        depth[sl] = np.where(total > 0, d, 0.0)
    return rgb, depth, opac


def oracle_render(scene: AnalyticScene, cam: Camera, n_samples: int = 1024,
                  exact: bool | None = None) -> RenderOutput:
    """Reference image. Disjoint scenes use exact per-interval attenuation by default."""
    origins, dirs = camera_rays(cam)
    if exact is None:
        exact = scene.is_disjoint()
    if exact and not scene.is_disjoint():
        raise ValueError("exact rendering needs disjoint primitives")
    if exact:
        rgb, depth, opac = _render_exact(scene, origins, dirs)
    else:
        rgb, depth, opac = _render_quadrature(scene, origins, dirs, n_samples)
    H, W = cam.height, cam.width
    return RenderOutput(rgb.reshape(H, W, 3), depth.reshape(H, W), opac.reshape(H, W))


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


def bake_field(scene: AnalyticScene, dims, bbox=None) -> VoxelField:
    lo, hi = scene.bounds() if bbox is None else (np.asarray(bbox[0], float), np.asarray(bbox[1], float))
    f = VoxelField.empty(dims, lo, hi)
    dens, sh = oracle_query(scene, f.voxel_centers())
    f.raw_density[:] = softplus_inv(np.maximum(dens, 1e-6))
    empty = dens <= 0
    if empty.any() and not empty.all():
        # empty voxels take the SH of the nearest occupied voxel, so trilinear
        # lookups near a surface do not blend its color toward zero SH
        _, idx = ndimage.distance_transform_edt(empty, return_indices=True)
        sh = sh[tuple(idx)]
    f.sh[:] = sh
    f.background[:] = scene.background
    return f


# -- trajectories ------------------------------------------------------------

@dataclass
class TrajectorySpec:
    kind: str  # "orbit" | "corridor" | "opposite_side"
    count: int
    intrinsics: Camera
    target: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    elevation: float = 0.0
    start: tuple | None = None
    end: tuple | None = None
    up: tuple = (0.0, 1.0, 0.0)


def _corridor_positions(spec: TrajectorySpec):
    if spec.start is None or spec.end is None:
        raise DegenerateSpec("corridor needs start and end")
    a, b = np.asarray(spec.start, float), np.asarray(spec.end, float)
    if np.linalg.norm(b - a) == 0:
        raise DegenerateSpec("zero-length corridor")
    u = np.linspace(0.0, 1.0, spec.count) if spec.count > 1 else np.zeros(1)
    return a + u[:, None] * (b - a)


def lateral_axis(spec: TrajectorySpec) -> np.ndarray:
    """Unit vector from the target toward the corridor, orthogonal to path and up."""
    a, b = np.asarray(spec.start, float), np.asarray(spec.end, float)
    path = (b - a) / np.linalg.norm(b - a)
    up = np.asarray(spec.up, float)
    n = np.cross(path, up)
    n /= np.linalg.norm(n)
    if np.dot(0.5 * (a + b) - np.asarray(spec.target, float), n) < 0:
        n = -n
    return n


def make_trajectory(spec: TrajectorySpec) -> list[Camera]:
    if spec.count < 1:
        raise DegenerateSpec("count must be >= 1")
    tgt = np.asarray(spec.target, float)
    tmpl = spec.intrinsics
    if spec.kind == "orbit":
        if not spec.radius > 0:
            raise DegenerateSpec("orbit radius must be > 0")
        ang = 2 * math.pi * np.arange(spec.count) / spec.count
        pos = tgt + np.stack([spec.radius * np.cos(ang), np.full_like(ang, spec.elevation),
                              spec.radius * np.sin(ang)], axis=1)
    elif spec.kind == "corridor":
        pos = _corridor_positions(spec)
    elif spec.kind == "opposite_side":
        pos = _corridor_positions(spec)
        n = lateral_axis(spec)
        if np.dot(pos[0] - tgt, n) <= 0:
            raise DegenerateSpec("corridor passes through the target; no opposite side")
        pos = pos - 2 * ((pos - tgt) @ n)[:, None] * n
    else:
        raise DegenerateSpec(f"unknown trajectory kind {spec.kind!r}")
    return [tmpl.with_pose(look_at(p, tgt, spec.up)) for p in pos]


# -- default benchmark -------------------------------------------------------

def sky_background(zenith=(0.35, 0.55, 0.9), horizon=(0.75, 0.8, 0.85)) -> np.ndarray:
    """Vertical gradient: ``horizon`` at y = 0, ``zenith`` at y = 1 (linear in y)."""
    zen, hor = np.asarray(zenith, float), np.asarray(horizon, float)
    c = np.zeros((3, 16))
    c[:, 0] = (hor - 0.5) / C0
    c[:, 1] = (zen - hor) / C1
    return c.reshape(N_COEFFS)


def three_spheres(density: float = 40.0) -> AnalyticScene:
    """Three disjoint opaque spheres inside a 2 m box, one with a view-dependent tint."""
    tinted = rgb_to_sh_dc((0.25, 0.3, 0.8)).reshape(3, 16)
    tinted[:, 3] = np.array([0.15, 0.1, -0.1]) / C1  # varies with the x component of the view
    prims = [
        Primitive.sphere((-0.45, -0.15, -0.1), 0.32, density, rgb_to_sh_dc((0.85, 0.25, 0.15))),
        Primitive.sphere((0.45, -0.05, 0.2), 0.28, density, rgb_to_sh_dc((0.2, 0.75, 0.3))),
        Primitive.sphere((0.1, 0.35, -0.55), 0.3, density, tinted.reshape(N_COEFFS)),
    ]
    return AnalyticScene(prims, sky_background(), bbox=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)))
