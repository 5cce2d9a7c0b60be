import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nerfgs.convert import (G2NConfig, N2GConfig, PointCloud, extract_pointcloud, gs_to_nerf,
                            knn_mean_distance, nerf_to_gs, splats_from_points)
from nerfgs.errors import NoSurface, TooFewPoints
from nerfgs.field import TrainConfig, VoxelField
from nerfgs.geometry import Camera, look_at
from nerfgs.metrics import psnr
from nerfgs.oracle import AnalyticScene, Primitive, bake_field
from nerfgs.sh import rgb_to_sh_dc, sh_eval
from nerfgs.splats import SplatScene, rasterize


def brute_knn(p, k):
    n = len(p)
    out = np.empty(n)
    for i in range(n):
        d = []
        for j in range(n):
            if j != i:
                x, y, z = (float(p[j, c] - p[i, c]) for c in range(3))
                d.append((math.sqrt(x * x + y * y + z * z), j))
        d.sort()
        out[i] = sum(v for v, _ in d[:k]) / k
    return out


# -- knn ---------------------------------------------------------------------

def test_knn_unit_square():
    p = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
    np.testing.assert_allclose(knn_mean_distance(p, 3), (2 + math.sqrt(2)) / 3, rtol=1e-15)


def test_knn_collinear():
    p = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], float)
    np.testing.assert_allclose(knn_mean_distance(p, 3), [2, 4 / 3, 4 / 3, 2], rtol=1e-15)


def test_knn_too_few_points():
    with pytest.raises(TooFewPoints):
        knn_mean_distance(np.zeros((3, 3)), 3)


def test_knn_matches_brute_force_on_100_sets():
    rng = np.random.default_rng(0)
    for t in range(100):
        n = int(rng.integers(4, 501)) if t % 10 else 500
        p = rng.uniform(-1, 1, (n, 3))
        if t % 7 == 0:
            p = np.round(p * 4) / 4  # lattice points: many exact distance ties
        k = int(rng.integers(1, 5))
        assert np.array_equal(knn_mean_distance(p, k), brute_knn(p, k)), t


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(5, 40), st.just(3)),
              elements=st.floats(-10, 10, allow_nan=False)), st.integers(1, 4))
def test_knn_property_brute_force(p, k):
    assert np.array_equal(knn_mean_distance(p, k), brute_knn(p, k))


def test_knn_duplicates_give_zero():
    p = np.array([[0, 0, 0]] * 4 + [[1, 1, 1]], float)
    assert np.all(knn_mean_distance(p, 3)[:4] == 0)


# -- splat creation -------------------------------------------------------------

def cloud(n=50, seed=0, density=None):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 50, n) if density is None else np.full(n, density, float)
    return PointCloud(rng.normal(size=(n, 3)), d, rng.normal(0, 0.3, (n, 48)))


def test_splats_are_isotropic_positive_and_copy_sh():
    pc = cloud()
    scene, _ = splats_from_points(pc, 3, np.zeros(48))
    assert len(scene) == len(pc)
    s = np.exp(scene.log_scales)
    assert np.all(s > 0)
    assert np.all(scene.log_scales[:, 0] == scene.log_scales[:, 1])
    assert np.all(scene.log_scales[:, 1] == scene.log_scales[:, 2])
    np.testing.assert_allclose(s[:, 0], 0.5 * knn_mean_distance(pc.points, 3), rtol=1e-14)
    assert np.all(scene.rotations == [1, 0, 0, 0])
    dirs = np.random.default_rng(1).normal(size=(20, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for i in range(len(scene)):
        assert np.array_equal(sh_eval(scene.sh[i], dirs), sh_eval(pc.sh[i], dirs))


def test_opacity_formula():
    pc = cloud()
    scene, _ = splats_from_points(pc, 3, np.zeros(48))
    s = 0.5 * knn_mean_distance(pc.points, 3)
    cap = 1 / (1 + math.exp(-15.0))  # logit cap
    want = np.minimum(1 - np.exp(-pc.density * 2 * s), cap)
    np.testing.assert_allclose(scene.opacities, want, rtol=1e-12)


def test_opacity_limits():
    pc = cloud(density=1e9)
    scene, _ = splats_from_points(pc, 3, np.zeros(48))
    assert np.all(scene.opacity_logits == 15.0)
    pc = cloud(density=0.0)
    scene, rep = splats_from_points(pc, 3, np.zeros(48))
    assert len(scene) == 0 and rep["dropped_transparent"] == len(pc)


# -- extraction ------------------------------------------------------------------

def ring_cams(n=8, radius=3.0, size=24, elev=0.8):
    out = []
    for k in range(n):
        a = 2 * math.pi * k / n
        eye = [radius * math.cos(a), elev * (1 if k % 2 else -1), radius * math.sin(a)]
        out.append(Camera(size, size, size / 2, size / 2, size, size, look_at(eye, [0, 0, 0])))
    return out


def box_scene():
    return AnalyticScene([Primitive.box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5), 200.0,
                                        rgb_to_sh_dc((0.7, 0.3, 0.2)))],
                         rgb_to_sh_dc((0.1, 0.1, 0.1)), bbox=((-1, -1, -1), (1, 1, 1)))


def test_zero_density_field_has_no_surface():
    f = VoxelField.empty((8, 8, 8), (-1, -1, -1), (1, 1, 1), -30.0)
    with pytest.raises(NoSurface):
        extract_pointcloud(f, ring_cams(), N2GConfig(n_rays=500, samples_per_ray=32))


def test_box_points_lie_near_box_surface():
    f = bake_field(box_scene(), (32, 32, 32))
    cfg = N2GConfig(n_rays=4000, samples_per_ray=256)
    pc = extract_pointcloud(f, ring_cams(), cfg)
    assert 0 < len(pc) <= cfg.n_rays
    cell = 2.0 / 32
    # distance to the surface of the axis-aligned box [-0.5, 0.5]^3
    q = np.abs(pc.points) - 0.5
    outside = np.linalg.norm(np.maximum(q, 0), axis=1)
    inside = -np.minimum(q.max(axis=1), 0)
    dist = np.where(q.max(axis=1) > 0, outside, inside)
    assert dist.max() <= 2 * cell, dist.max()


def test_threshold_monotone_and_report_counts():
    f = bake_field(box_scene(), (16, 16, 16))
    counts = []
    for thr in (0.5, 0.9, 0.98, 0.999999):
        pc = extract_pointcloud(f, ring_cams(), N2GConfig(n_rays=3000, samples_per_ray=64,
                                                          opacity_threshold=thr))
        rep = pc.report
        assert rep["kept"] + rep["filtered_by_opacity"] + rep["filtered_by_depth"] == 3000
        counts.append(len(pc))
    assert counts == sorted(counts, reverse=True)


def test_max_depth_filters_far_points():
    f = bake_field(box_scene(), (16, 16, 16))
    cams = ring_cams()
    cfg = N2GConfig(n_rays=2000, samples_per_ray=64, max_depth=2.6)
    pc = extract_pointcloud(f, cams, cfg)
    assert pc.report["filtered_by_depth"] > 0
    centers = np.array([c.center for c in cams])
    nearest = np.min(np.linalg.norm(pc.points[:, None] - centers[None], axis=2), axis=1)
    assert np.all(nearest <= 2.6 + 1e-9)
    with pytest.raises(NoSurface):
        extract_pointcloud(f, cams, N2GConfig(n_rays=500, samples_per_ray=64, max_depth=0.1))


def test_extraction_is_deterministic():
    f = bake_field(box_scene(), (16, 16, 16))
    cfg = N2GConfig(n_rays=2000, samples_per_ray=64, seed=7)
    a = nerf_to_gs(f, ring_cams(), cfg)
    b = nerf_to_gs(f, ring_cams(), cfg)
    for k, v in a.params().items():
        assert v.tobytes() == b.params()[k].tobytes()


def test_sh_transferred_from_field_query():
    from nerfgs.field import sample_field
    f = bake_field(box_scene(), (16, 16, 16))
    rng = np.random.default_rng(0)
    f.sh += rng.normal(0, 0.1, f.sh.shape)
    pc = extract_pointcloud(f, ring_cams(), N2GConfig(n_rays=1000, samples_per_ray=64))
    _, sh = sample_field(f, pc.points)
    assert np.array_equal(pc.sh, sh)
    scene = nerf_to_gs(f, ring_cams(), N2GConfig(n_rays=1000, samples_per_ray=64))
    assert np.array_equal(scene.sh, sh[-np.expm1(-pc.density * 2 * np.maximum(
        0.5 * knn_mean_distance(pc.points, 3), 1e-7)) >= 1 / 255])
    np.testing.assert_array_equal(scene.background, f.background)


# -- splats -> field -------------------------------------------------------------

def test_empty_scene_fits_pure_background():
    bg = rgb_to_sh_dc((0.2, 0.5, 0.7))
    cams = ring_cams(4, size=16)
    cfg = G2NConfig(field_dims=(8, 8, 8), bbox=((-1, -1, -1), (1, 1, 1)), init_raw_density=-8,
                    train=TrainConfig(iterations=300, rays_per_batch=256, samples_per_ray=16,
                                      learning_rate_background=0.05))
    f, renders, _ = gs_to_nerf(SplatScene.empty(bg), cams, cfg)
    from nerfgs.field import render_image
    for c, r in zip(cams, renders):
        assert psnr(render_image(f, c, 16).rgb, r) >= 40


def test_empty_scene_without_bbox_is_rejected():
    with pytest.raises(ValueError):
        gs_to_nerf(SplatScene.empty(), ring_cams(2), G2NConfig())


def test_reuse_with_zero_iterations_returns_f0():
    f0 = bake_field(box_scene(), (8, 8, 8))
    scene = nerf_to_gs(f0, ring_cams(), N2GConfig(n_rays=500, samples_per_ray=32))
    cfg = G2NConfig(field_dims=(8, 8, 8), reuse_field=True, train=TrainConfig(iterations=0))
    f, _, _ = gs_to_nerf(scene, ring_cams(), cfg, f0=f0)
    assert f is not f0
    for a in ("raw_density", "sh", "background"):
        assert getattr(f, a).tobytes() == getattr(f0, a).tobytes()


def test_renders_are_rasterized_training_views():
    f0 = bake_field(box_scene(), (8, 8, 8))
    scene = nerf_to_gs(f0, ring_cams(), N2GConfig(n_rays=500, samples_per_ray=32))
    cams = ring_cams(3)
    _, renders, _ = gs_to_nerf(scene, cams, G2NConfig(field_dims=(8, 8, 8),
                                                      train=TrainConfig(iterations=0)))
    for c, r in zip(cams, renders):
        assert np.array_equal(r, rasterize(scene, c).rgb)


def test_config_validation():
    with pytest.raises(ValueError):
        N2GConfig(knn_k=0)
    with pytest.raises(ValueError):
        N2GConfig(opacity_threshold=0.0)
    with pytest.raises(ValueError):
        G2NConfig(field_dims=(8, 0, 8))
