"""End-to-end benchmark: field -> splats (+ fine-tuning) -> field, baseline and editing.

Everything here runs in memory and writes artifacts under ``out_dir``; the CLI
``repro`` command is a thin wrapper around :func:`run_repro`.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .convert import G2NConfig, N2GConfig, gs_to_nerf, knn_mean_distance, nerf_to_gs
from .errors import ConfigError
from .field import TrainConfig, VoxelField, render_image, save_vxf, train_field
from .geometry import Camera, intrinsics_from_fov
from .metrics import evaluate, psnr, ssim
from .oracle import AnalyticScene, TrajectorySpec, make_trajectory, oracle_render, three_spheres
from .sh import C0
from .splats import (FinetuneConfig, SphereRegion, SplatScene, finetune, project_splats,
                     rasterize, remove_splats, save_ply, select_splats)

log = logging.getLogger(__name__)


@dataclass
class BenchmarkConfig:
    """Scene and camera layout. An empty ``scene_file`` means the built-in three spheres."""
    scene_file: str = ""
    sphere_density: float = 40.0
    width: int = 128
    height: int = 128
    fov_deg: float = 50.0
    target: tuple = (0.0, 0.0, 0.0)
    train_views: int = 20
    train_start: tuple = (-1.7, 0.45, 2.5)
    train_end: tuple = (1.7, 0.45, 2.5)
    val_views: int = 8
    val_start: tuple = (-1.5, 0.3, 2.5)
    val_end: tuple = (1.5, 0.3, 2.5)
    opposite_views: int = 8


@dataclass
class FieldConfig:
    dims: tuple = (64, 64, 64)
    bbox_min: tuple = (-1.0, -1.0, -1.0)
    bbox_max: tuple = (1.0, 1.0, 1.0)
    init_raw_density: float = -6.0


@dataclass
class ReproConfig:
    snapshots: tuple = (0, 100, 1000)
    eval_samples: int = 128
    eval_min_weight: float = 1e-4
    baseline_points: int = 4000
    baseline_opacity: float = 0.1
    edit_primitive: int = 1
    edit_pad: float = 1.15
    refit_iterations: int = 300


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/repro"
    benchmark: BenchmarkConfig = dataclasses.field(default_factory=BenchmarkConfig)
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    # view-dependent bands learn 20x slower than the DC term (narrow camera baseline)
    train: TrainConfig = dataclasses.field(default_factory=lambda: TrainConfig(
        iterations=1000, rays_per_batch=2048, samples_per_ray=64, sh_rest_scale=0.05))
    n2g: N2GConfig = dataclasses.field(default_factory=lambda: N2GConfig(n_rays=100_000))
    finetune: FinetuneConfig = dataclasses.field(default_factory=FinetuneConfig)
    g2n: G2NConfig = dataclasses.field(default_factory=lambda: G2NConfig(train=TrainConfig(
        iterations=1000, rays_per_batch=2048, samples_per_ray=64, sh_rest_scale=0.05),
        init_raw_density=-6.0))
    repro: ReproConfig = dataclasses.field(default_factory=ReproConfig)

    def seeded(self, seed: int | None = None) -> "RunConfig":
        """Copy with every stage seed set from the top-level seed."""
        s = self.seed if seed is None else int(seed)
        return dataclasses.replace(
            self, seed=s,
            train=dataclasses.replace(self.train, seed=s),
            n2g=dataclasses.replace(self.n2g, seed=s),
            finetune=dataclasses.replace(self.finetune, seed=s),
            g2n=dataclasses.replace(self.g2n, train=dataclasses.replace(self.g2n.train, seed=s)),
        )


def load_run_config(path=None, seed=None) -> RunConfig:
    cfg = RunConfig() if path is None else io.from_dict(RunConfig, io.read_document(path))
    return cfg.seeded(seed)


# -- benchmark ---------------------------------------------------------------

@dataclass
class Benchmark:
    scene: AnalyticScene
    train: list
    val: list
    opposite: list
    train_images: list
    val_images: list
    opposite_images: list


def benchmark_scene(b: BenchmarkConfig) -> AnalyticScene:
    if b.scene_file:
        return AnalyticScene.load(b.scene_file)
    return three_spheres(b.sphere_density)


def benchmark_cameras(b: BenchmarkConfig):
    fx, fy, cx, cy = intrinsics_from_fov(b.width, b.height, b.fov_deg)
    tmpl = Camera(fx, fy, cx, cy, b.width, b.height)
    train = make_trajectory(TrajectorySpec("corridor", b.train_views, tmpl, target=b.target,
                                           start=b.train_start, end=b.train_end))
    spec = TrajectorySpec("corridor", b.val_views, tmpl, target=b.target,
                          start=b.val_start, end=b.val_end)
    val = make_trajectory(spec)
    opp = make_trajectory(dataclasses.replace(spec, kind="opposite_side",
                                              count=b.opposite_views))
    return train, val, opp


def build_benchmark(b: BenchmarkConfig) -> Benchmark:
    scene = benchmark_scene(b)
    train, val, opp = benchmark_cameras(b)

    def gt(cams):
        return [oracle_render(scene, c).rgb for c in cams]

    return Benchmark(scene, train, val, opp, gt(train), gt(val), gt(opp))


# -- helpers -----------------------------------------------------------------

def random_splats(bbox_min, bbox_max, n: int, opacity: float, seed: int,
                  background=None) -> SplatScene:
    """Uniform random isotropic splats with random DC colors (the from-scratch start)."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(bbox_min, float), np.asarray(bbox_max, float)
    pos = lo + rng.random((n, 3)) * (hi - lo)
    scale = 0.5 * knn_mean_distance(pos, 3)
    sh = np.zeros((n, 48))
    sh[:, [0, 16, 32]] = (rng.random((n, 3)) - 0.5) / C0
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    logit = np.full(n, np.log(opacity / (1 - opacity)))
    return SplatScene(pos, np.repeat(np.log(scale)[:, None], 3, axis=1), rot, logit, sh,
                      background if background is not None else np.zeros(48))


def footprint_mask(scene: SplatScene, ids, cam: Camera) -> np.ndarray:
    """Pixels inside any selected splat's projected 3-sigma ellipse."""
    mask = np.zeros((cam.height, cam.width), dtype=bool)
    if len(ids) == 0:
        return mask
    p = project_splats(scene.take(np.asarray(ids)), cam)
    ys, xs = np.mgrid[0:cam.height, 0:cam.width] + 0.5
    for i in np.flatnonzero(p.depth > 0.01):
        a, b, c = p.conic[i]
        ext = 3.0 * np.sqrt(max(p.cov2d[i, 0, 0], p.cov2d[i, 1, 1]))
        mx, my = p.mean2d[i]
        x0, x1 = int(max(mx - ext, 0)), int(min(mx + ext + 1, cam.width))
        y0, y1 = int(max(my - ext, 0)), int(min(my + ext + 1, cam.height))
        if x0 >= x1 or y0 >= y1:
            continue
        dx = xs[y0:y1, x0:x1] - mx
        dy = ys[y0:y1, x0:x1] - my
        mask[y0:y1, x0:x1] |= a * dx * dx + 2 * b * dx * dy + c * dy * dy <= 9.0
    return mask


class _Evaluator:
    def __init__(self, bench: Benchmark, rc: ReproConfig):
        self.b = bench
        self.rc = rc

    def field_renders(self, f: VoxelField, cams):
        return [render_image(f, c, self.rc.eval_samples, min_weight=self.rc.eval_min_weight).rgb
                for c in cams]

    @staticmethod
    def splat_renders(s: SplatScene, cams):
        return [rasterize(s, c).rgb for c in cams]

    def row(self, render):
        out = {}
        for split, cams, refs in (("train", self.b.train, self.b.train_images),
                                  ("val", self.b.val, self.b.val_images),
                                  ("opposite", self.b.opposite, self.b.opposite_images)):
            rep = evaluate(render(cams), refs)
            out[f"{split}_psnr"] = rep.mean_psnr
            out[f"{split}_ssim"] = rep.mean_ssim
        out["gap_opposite"] = out["train_psnr"] - out["opposite_psnr"]
        out["gap_val"] = out["train_psnr"] - out["val_psnr"]
        return out


# -- the pipeline -------------------------------------------------------------

def run_repro(cfg: RunConfig, out_dir=None, bench: Benchmark | None = None) -> dict:
    """Run every stage, write artifacts, return the metric table and checks."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rc = cfg.repro
    if any(s > cfg.finetune.iterations for s in rc.snapshots):
        raise ConfigError("snapshots must not exceed finetune.iterations")
    timing = {}
    t0 = time.perf_counter()
    bench = bench or build_benchmark(cfg.benchmark)
    ev = _Evaluator(bench, rc)
    timing["benchmark_s"] = time.perf_counter() - t0
    table = {}

    # 1. source field
    t0 = time.perf_counter()
    fc = cfg.field
    f0 = VoxelField.empty(fc.dims, fc.bbox_min, fc.bbox_max, fc.init_raw_density)
    src, src_trace = train_field(f0, bench.train, bench.train_images, cfg.train)
    save_vxf(src, out / "field.vxf")
    io.write_trace_csv(out / "field_trace.csv", {"loss": src_trace.loss, "psnr": src_trace.psnr})
    timing["field_train_s"] = time.perf_counter() - t0
    table["field"] = ev.row(lambda cams: ev.field_renders(src, cams))

    # 2. field -> splats, fine-tuned with snapshots
    t0 = time.perf_counter()
    gs0, n2g_report = nerf_to_gs(src, bench.train, cfg.n2g, with_report=True)
    io.write_json(out / "n2g_report.json", n2g_report)
    timing["n2g_s"] = time.perf_counter() - t0
    empty = SplatScene.empty(gs0.background)
    table["background_only"] = ev.row(lambda cams: ev.splat_renders(empty, cams))
    snaps = {}

    def snapshot(it, scene):
        if it in rc.snapshots:
            snaps[it] = scene.copy()

    snapshot(0, gs0)
    t0 = time.perf_counter()
    gs_ft, ft_trace = finetune(gs0, bench.train, bench.train_images, cfg.finetune,
                               callback=snapshot)
    timing["finetune_s"] = time.perf_counter() - t0
    io.write_trace_csv(out / "finetune_trace.csv", {"loss": ft_trace.loss, "psnr": ft_trace.psnr})
    for it in sorted(snaps):
        save_ply(snaps[it], out / f"nerfgs_{it}.ply")
        table[f"nerfgs_{it}"] = ev.row(lambda cams, s=snaps[it]: ev.splat_renders(s, cams))
    final = gs_ft

    # 3. splats -> field
    t0 = time.perf_counter()
    gsnerf, gs_renders, g2n_trace = gs_to_nerf(final, bench.train, cfg.g2n, f0=src)
    save_vxf(gsnerf, out / "gsnerf.vxf")
    io.write_trace_csv(out / "gsnerf_trace.csv", {"loss": g2n_trace.loss, "psnr": g2n_trace.psnr})
    timing["g2n_s"] = time.perf_counter() - t0
    table["gsnerf"] = ev.row(lambda cams: ev.field_renders(gsnerf, cams))
    gsnerf_train = ev.field_renders(gsnerf, bench.train)
    roundtrip_ssim = float(np.mean([ssim(a, b) for a, b in zip(gsnerf_train, gs_renders)]))
    roundtrip_psnr = float(np.mean([psnr(a, b) for a, b in zip(gsnerf_train, gs_renders)]))

    # 4. from-scratch splat baseline
    t0 = time.perf_counter()
    base0 = random_splats(fc.bbox_min, fc.bbox_max, rc.baseline_points, rc.baseline_opacity,
                          cfg.seed)
    base, base_trace = finetune(base0, bench.train, bench.train_images, cfg.finetune)
    save_ply(base, out / "baseline.ply")
    io.write_trace_csv(out / "baseline_trace.csv", {"loss": base_trace.loss,
                                                    "psnr": base_trace.psnr})
    timing["baseline_s"] = time.perf_counter() - t0
    table["gs_baseline"] = ev.row(lambda cams: ev.splat_renders(base, cams))

    # 5. editing: drop one primitive's splats, refit the round-trip field
    t0 = time.perf_counter()
    edit = _edit_and_refit(cfg, bench, ev, final, gsnerf, out)
    timing["edit_s"] = time.perf_counter() - t0

    checks = acceptance_checks(table, roundtrip_psnr, roundtrip_ssim, edit)
    result = {"table": table, "roundtrip": {"psnr_vs_nerfgs_train": roundtrip_psnr,
                                            "ssim_vs_nerfgs_train": roundtrip_ssim},
              "edit": edit, "checks": checks, "config": io.to_dict(cfg)}
    io.write_json(out / "table.json", result)
    (out / "table.md").write_text(format_table(table))
    io.write_json(out / "timing.json", {"timing": timing})
    io.write_json(out / "hashes.json", io.hash_tree(out))
    result["timing"] = timing
    return result


def _edit_and_refit(cfg, bench, ev, scene, gsnerf, out):
    rc = cfg.repro
    prim = bench.scene.primitives[rc.edit_primitive]
    lo, hi = prim.bounds()
    center = 0.5 * (np.asarray(lo) + np.asarray(hi))
    radius = 0.5 * float(np.max(np.asarray(hi) - np.asarray(lo))) * rc.edit_pad
    ids = select_splats(scene, SphereRegion(tuple(center), radius))
    edited = remove_splats(scene, ids)
    save_ply(edited, out / "edited.ply")
    g2n = dataclasses.replace(cfg.g2n, reuse_field=True,
                              train=dataclasses.replace(cfg.g2n.train,
                                                        iterations=rc.refit_iterations))
    refit, _, _ = gs_to_nerf(edited, bench.train, g2n, f0=gsnerf)
    save_vxf(refit, out / "gsnerf_edited.vxf")
    before = ev.field_renders(gsnerf, bench.val)
    after = ev.field_renders(refit, bench.val)
    sky = [rasterize(SplatScene.empty(scene.background), c).rgb for c in bench.val]
    out_diff, in_before, in_after, n_in = [], [], [], 0
    for cam, a, b, s in zip(bench.val, before, after, sky):
        m = footprint_mask(scene, ids, cam)
        if (~m).any():
            out_diff.append(np.abs(b - a)[~m].mean())
        if m.any():
            in_before.append(np.abs(a - s)[m].sum())
            in_after.append(np.abs(b - s)[m].sum())
            n_in += 3 * int(m.sum())
    return {
        "removed_splats": len(ids),
        "outside_mad": float(np.mean(out_diff)) if out_diff else 0.0,
        "inside_dist_to_background_before": float(np.sum(in_before) / max(n_in, 1)),
        "inside_dist_to_background_after": float(np.sum(in_after) / max(n_in, 1)),
    }


def acceptance_checks(table, roundtrip_psnr, roundtrip_ssim, edit) -> dict:
    f, g0 = table["field"], table.get("nerfgs_0")
    gft = table[max((k for k in table if k.startswith("nerfgs_")), key=lambda k: int(k[7:]))]
    base, gsnerf, bg = table["gs_baseline"], table["gsnerf"], table["background_only"]
    c = {}
    if g0 is not None:
        c["conversion_below_field"] = g0["val_psnr"] < f["val_psnr"]
        c["conversion_above_background_6db"] = g0["val_psnr"] >= bg["val_psnr"] + 6.0
    c["finetune_recovers"] = gft["val_psnr"] >= f["val_psnr"] - 1.0
    c["baseline_gap_exceeds_field"] = base["gap_opposite"] > f["gap_opposite"]
    c["baseline_gap_exceeds_nerfgs"] = base["gap_opposite"] > gft["gap_opposite"]
    c["roundtrip_val_within_2db"] = abs(gsnerf["val_psnr"] - gft["val_psnr"]) <= 2.0
    c["roundtrip_train_ssim"] = roundtrip_ssim >= 0.9
    c["edit_outside_unchanged"] = edit["outside_mad"] <= 2.0 / 255.0
    c["edit_inside_toward_background"] = (edit["inside_dist_to_background_after"]
                                          < edit["inside_dist_to_background_before"])
    return c


def format_table(table: dict) -> str:
    cols = ["train_psnr", "val_psnr", "opposite_psnr", "val_ssim", "opposite_ssim",
            "gap_opposite"]
    lines = ["| model | " + " | ".join(cols) + " |", "|---" * (len(cols) + 1) + "|"]
    for name, row in table.items():
        lines.append(f"| {name} | " + " | ".join(f"{row[c]:.3f}" for c in cols) + " |")
    return "\n".join(lines) + "\n"
