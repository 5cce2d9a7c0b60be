import math

import numpy as np
import pytest

from nerfgs.errors import DegenerateSpec, FormatError
from nerfgs.field import render_image, sample_field
from nerfgs.geometry import Camera, look_at
from nerfgs.metrics import psnr
from nerfgs.oracle import (AnalyticScene, Primitive, TrajectorySpec, bake_field, lateral_axis,
                           make_trajectory, oracle_query, oracle_render, three_spheres)
from nerfgs.sh import rgb_to_sh_dc

SH_A = rgb_to_sh_dc((0.8, 0.2, 0.1))
SH_B = rgb_to_sh_dc((0.1, 0.3, 0.9))
TMPL = Camera(20.0, 20.0, 12.0, 12.0, 24, 24)


def small_cam(eye=(0.3, 0.4, 3.0), size=32):
    return Camera(size * 1.2, size * 1.2, size / 2, size / 2, size, size, look_at(eye, [0, 0, 0]))


# -- queries -------------------------------------------------------------------

def test_query_outside_is_zero():
    s = AnalyticScene([Primitive.sphere((0, 0, 0), 0.5, 5.0, SH_A)], SH_B)
    d, sh = oracle_query(s, [[2.0, 0, 0]])
    assert d[0] == 0 and np.all(sh[0] == 0)


def test_query_inside_sphere():
    s = AnalyticScene([Primitive.sphere((0, 0, 0), 0.5, 5.0, SH_A)])
    d, sh = oracle_query(s, [[0.1, 0.1, 0.1]])
    assert d[0] == 5.0 and np.array_equal(sh[0], SH_A)


def test_query_overlapping_boxes_weighted():
    s = AnalyticScene([Primitive.box((0, 0, 0), (1, 1, 1), 1.0, SH_A),
                       Primitive.box((0.5, 0.5, 0.5), (2, 2, 2), 3.0, SH_B)])
    d, sh = oracle_query(s, [[0.75, 0.75, 0.75]])
    assert d[0] == 4.0
    np.testing.assert_allclose(sh[0], (SH_A + 3 * SH_B) / 4, atol=1e-15)


def test_primitive_validation():
    with pytest.raises(ValueError):
        Primitive.sphere((0, 0, 0), 0.0, 1.0, SH_A)
    with pytest.raises(ValueError):
        Primitive.box((0, 0, 0), (1, -1, 1), 1.0, SH_A)
    with pytest.raises(ValueError):
        Primitive.sphere((0, 0, 0), 1.0, -1.0, SH_A)


# -- rendering -------------------------------------------------------------------

def test_empty_scene_renders_background():
    s = AnalyticScene([], rgb_to_sh_dc((0.2, 0.3, 0.4)))
    out = oracle_render(s, small_cam())
    np.testing.assert_allclose(out.rgb, np.broadcast_to([0.2, 0.3, 0.4], out.rgb.shape),
                               atol=1e-12)
    assert np.all(out.opacity == 0)


def test_opaque_sphere_chord():
    s = AnalyticScene([Primitive.sphere((0, 0, 0), 0.5, 50.0, SH_A)])
    cam = Camera(10.0, 10.0, 2.0, 2.0, 4, 4, look_at([0, 0, 3], [0, 0, 0]))
    out = oracle_render(s, cam)
    # the central pixels' rays have chords well above 0.5 m
    assert np.all(out.opacity[1:3, 1:3] >= 1 - 1e-9)
    assert np.all(np.abs(out.opacity[1:3, 1:3] - (1 - math.exp(-25))) <= 1e-9)


def test_exact_median_depth_single_slab():
    # slab density 2 entered at distance t0 from the camera: median where e^{-2 s} = 1 - o/2
    s = AnalyticScene([Primitive.box((-5, -5, -1.0), (5, 5, 0.0), 2.0, SH_A)])
    cam = Camera(10.0, 10.0, 0.5, 0.5, 1, 1, look_at([0, 0, 3], [0, 0, 0]))
    out = oracle_render(s, cam)
    o = 1 - math.exp(-2.0)
    assert out.opacity[0, 0] == pytest.approx(o, abs=1e-12)
    assert out.depth[0, 0] == pytest.approx(3.0 - math.log(1 - o / 2) / 2.0, abs=1e-12)


def test_exact_and_quadrature_agree():
    s = three_spheres()
    cam = small_cam(size=24)
    a = oracle_render(s, cam, exact=True)
    b = oracle_render(s, cam, n_samples=8192, exact=False)
    assert np.abs(a.rgb - b.rgb).max() <= 1e-3


def test_render_is_deterministic_and_self_psnr_inf():
    s = three_spheres()
    cam = small_cam()
    a, b = oracle_render(s, cam), oracle_render(s, cam)
    assert a.rgb.tobytes() == b.rgb.tobytes()
    assert psnr(a.rgb, b.rgb) == math.inf


def test_exact_needs_disjoint():
    s = AnalyticScene([Primitive.box((0, 0, 0), (1, 1, 1), 1.0, SH_A),
                       Primitive.box((0.5, 0.5, 0.5), (2, 2, 2), 3.0, SH_B)])
    assert not s.is_disjoint()
    with pytest.raises(ValueError):
        oracle_render(s, small_cam(), exact=True)
    out = oracle_render(s, small_cam(), n_samples=64)  # overlapping scenes use quadrature
    assert out.rgb.shape == (32, 32, 3)


def test_three_spheres_is_disjoint_and_inside_box():
    s = three_spheres()
    assert s.is_disjoint() and len(s.primitives) == 3
    for p in s.primitives:
        lo, hi = p.bounds()
        assert np.all(lo > -1) and np.all(hi < 1)


# -- baking ----------------------------------------------------------------------

def test_bake_reproduces_densities_at_centers():
    s = three_spheres()
    f = bake_field(s, (16, 16, 16))
    c = f.voxel_centers()
    want, _ = oracle_query(s, c)
    got, _ = sample_field(f, c)
    assert np.abs(got - np.maximum(want, 1e-6)).max() <= 1e-5


def test_bake_empty_scene_is_near_zero():
    f = bake_field(AnalyticScene([], SH_B, bbox=((-1, -1, -1), (1, 1, 1))), (8, 8, 8))
    d, _ = sample_field(f, f.voxel_centers())
    assert d.max() <= 1e-5
    np.testing.assert_array_equal(f.background, SH_B)


def test_lattice_aligned_box_bakes_accurately():
    # 64 cells over [-1, 1]: faces at multiples of 1/8 lie on cell boundaries
    s = AnalyticScene([Primitive.box((-0.5, -0.375, -0.25), (0.5, 0.375, 0.25), 30.0, SH_A)],
                      SH_B, bbox=((-1, -1, -1), (1, 1, 1)))
    f = bake_field(s, (64, 64, 64))
    cam = small_cam((0.8, 0.6, 2.6), 48)
    ref = oracle_render(s, cam).rgb
    got = render_image(f, cam, 512).rgb
    assert psnr(got, ref) >= 35


# -- trajectories -------------------------------------------------------------------

def test_orbit_angles_and_gaze():
    cams = make_trajectory(TrajectorySpec("orbit", 4, TMPL, radius=2.0))
    pos = np.array([c.center for c in cams])
    np.testing.assert_allclose(pos, [[2, 0, 0], [0, 0, 2], [-2, 0, 0], [0, 0, -2]], atol=1e-12)
    for c in cams:
        fwd = -c.rotation[:, 2]
        np.testing.assert_allclose(fwd, -c.center / np.linalg.norm(c.center), atol=1e-9)


def test_corridor_endpoints():
    cams = make_trajectory(TrajectorySpec("corridor", 2, TMPL, start=(-1, 0.2, 3),
                                          end=(1, 0.2, 3)))
    np.testing.assert_allclose(cams[0].center, [-1, 0.2, 3], atol=1e-12)
    np.testing.assert_allclose(cams[1].center, [1, 0.2, 3], atol=1e-12)


def test_opposite_side_distance():
    spec = TrajectorySpec("corridor", 6, TMPL, start=(-1.5, 0.3, 2.5), end=(1.5, 0.3, 2.5))
    train = np.array([c.center for c in make_trajectory(spec)])
    opp = make_trajectory(TrajectorySpec("opposite_side", 6, TMPL, start=spec.start,
                                         end=spec.end))
    offset = float((train[0] - np.array(spec.target)) @ lateral_axis(spec))
    a, b = np.array(spec.start), np.array(spec.end)
    for c in opp:
        p = c.center
        u = np.clip((p - a) @ (b - a) / ((b - a) @ (b - a)), 0, 1)
        assert np.linalg.norm(p - (a + u * (b - a))) >= offset
        R = c.rotation
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)


def test_degenerate_specs():
    with pytest.raises(DegenerateSpec):
        make_trajectory(TrajectorySpec("orbit", 3, TMPL, radius=0.0))
    with pytest.raises(DegenerateSpec):
        make_trajectory(TrajectorySpec("corridor", 3, TMPL, start=(1, 0, 2), end=(1, 0, 2)))
    with pytest.raises(DegenerateSpec):
        make_trajectory(TrajectorySpec("corridor", 0, TMPL, start=(0, 0, 2), end=(1, 0, 2)))
    with pytest.raises(DegenerateSpec):
        make_trajectory(TrajectorySpec("spiral", 3, TMPL))


# -- serialization ---------------------------------------------------------------------

def test_scene_json_round_trip(tmp_path):
    s = three_spheres()
    s.save(tmp_path / "s.json")
    t = AnalyticScene.load(tmp_path / "s.json")
    assert t.to_json() == s.to_json()
    cam = small_cam()
    assert oracle_render(t, cam).rgb.tobytes() == oracle_render(s, cam).rgb.tobytes()


def test_scene_json_malformed():
    with pytest.raises(FormatError):
        AnalyticScene.from_json('{"primitives": [{"shape": "cone"}]}')
