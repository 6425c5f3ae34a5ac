import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import ConvexHull

from reflectobs import synth
from reflectobs.geometry import (epipole_prev, ground_homography, ground_pixel_parallax,
                                 height_side)
from reflectobs.io import load_sequence
from reflectobs.synth import (KIND_FLOOR, KIND_OBSTACLE, KIND_REFLECTION, Cuboid, SceneSpec,
                              default_camera, generate_oracle, line_kernel, mirror_point,
                              motion_blur, perturb_odometry, random_scene, render)


def small_scene(obstacles=(), reflectors=(), width=200, height=120, n_frames=2):
    k, ext = default_camera(width, height, focal=160.0)
    odo = [(0.1 * i, 0.0, 0.0) for i in range(n_frames)]
    return SceneSpec(k, ext, odo, list(obstacles), list(reflectors), (0.6, 0.55, 0.5), 0.08, 3)


BOX = Cuboid((1.3, 0.05), (0.25, 0.2), 0.0, 0.18, (0.8, 0.2, 0.2), 0.3)
HANGING = Cuboid((2.6, -0.2), (0.4, 0.3), 0.9, 1.2, (0.1, 0.3, 0.8), -0.2)


# -- mirror -------------------------------------------------------------------


def test_mirror_involution_million_points():
    p = np.random.default_rng(0).uniform(-10, 10, (10 ** 6, 3))
    assert np.abs(mirror_point(mirror_point(p)) - p).max() <= 1e-12


def test_mirror_fixed_points_and_height():
    assert np.array_equal(mirror_point([1.5, -2.0, 0.0]), [1.5, -2.0, 0.0])
    assert np.allclose(mirror_point([0.3, 0.4, 0.7]), [0.3, 0.4, -0.7])
    # tilted plane through (0, 0, 1): n = z, offset = -1
    assert np.allclose(mirror_point([0, 0, 3.0], offset=-1.0), [0, 0, -1.0])


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)),
       st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1)), st.floats(-2, 2))
def test_mirror_preserves_plane_distance(x, n, off):
    n = np.array(n) / np.linalg.norm(n)
    x = np.array(x)
    y = mirror_point(x, n, off)
    assert np.isclose(y @ n + off, -(x @ n + off), atol=1e-9)


def test_cuboid_mirrored_below_floor():
    m = HANGING.mirrored()
    assert (m.z0, m.z1) == (-1.2, -0.9)
    assert np.allclose(m.corners()[:, 2].max(), -0.9)


def test_obstacle_must_stand_on_floor():
    with pytest.raises(ValueError):
        small_scene([Cuboid((1, 0), (0.1, 0.1), -0.1, 0.2, (1, 1, 1))])


# -- rendering ----------------------------------------------------------------


def test_empty_scene_is_floor():
    r = render(small_scene(), 0, supersample=1)
    assert not r.obstacle_mask.any()
    assert r.floor_mask.all()
    assert np.all(r.kind == KIND_FLOOR)
    # low-contrast texture
    assert 0 < r.rgb.std() < 0.1


def test_obstacle_mask_matches_projected_area():
    spec = small_scene([BOX])
    r = render(spec, 0, supersample=1)
    px, depth = spec.pose(0).project(BOX.corners(), spec.intrinsics)
    assert np.all(depth > 0)
    hull = ConvexHull(px)
    area, perimeter = hull.volume, hull.area
    assert abs(int(r.obstacle_mask.sum()) - area) <= perimeter / 2 + 4


def test_reflections_are_floor_and_masks_disjoint():
    spec = small_scene([BOX], [HANGING])
    r = render(spec, 1, supersample=1)
    refl = r.kind == KIND_REFLECTION
    assert refl.any()
    assert np.all(r.floor_mask[refl])
    assert not np.any(r.floor_mask & r.obstacle_mask)
    assert np.all(r.points[refl][:, 2] < 0)
    # the reflection is visible: colours differ from the bare floor render
    bare = render(small_scene([BOX]), 1, supersample=1)
    assert np.abs(r.rgb[refl] - bare.rgb[refl]).mean() > 0.05


def test_render_deterministic():
    spec = random_scene(7, n_frames=2, width=160, height=96)
    a, b = render(spec, 1), render(spec, 1)
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.labels, b.labels)


def test_render_rejects_tiny_resolution():
    with pytest.raises(ValueError):
        render(small_scene(width=32, height=32), 0)


def test_random_scene_content():
    spec = random_scene(11)
    assert len(spec.obstacles) >= 2 and len(spec.reflectors) >= 2
    assert all(o.z0 == 0 for o in spec.obstacles)
    assert all(r.z0 > spec.camera_height for r in spec.reflectors)
    assert random_scene(11).to_dict() == spec.to_dict()
    assert SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict()))).to_dict() == spec.to_dict()


def test_random_scene_planar_trajectory():
    spec = random_scene(2, n_frames=4, step_m=0.2)
    heights = [p.c[2] for p in spec.trajectory]
    assert np.allclose(heights, spec.camera_height)
    steps = np.diff(np.array(spec.odometry)[:, :2], axis=0)
    assert np.allclose(np.linalg.norm(steps, axis=1), 0.2)


# -- oracle -------------------------------------------------------------------


def test_oracle_trichotomy():
    spec = small_scene([BOX], [HANGING])
    k = spec.intrinsics
    of = generate_oracle(spec, 1)
    h = ground_homography(of.pose_t, of.pose_prev, spec.ground, k)
    e = epipole_prev(of.pose_t, of.pose_prev, k).point
    par = ground_pixel_parallax(of.a_prev, h.transfer(of.x_t), e)
    side = height_side(par.rho, forward=True, tol=1e-9)
    assert np.all(side[of.kind == KIND_OBSTACLE][of.height[of.kind == KIND_OBSTACLE] > 1e-6] == 1)
    assert np.all(side[of.kind == KIND_REFLECTION] == -1)
    assert np.abs(par.rho[of.kind == KIND_FLOOR]).max() <= 1e-12
    assert par.collinearity_residual.max() < 1e-9


def test_oracle_deterministic_and_bounds():
    spec = small_scene([BOX], [HANGING])
    a, b = generate_oracle(spec, 1), generate_oracle(spec, 1)
    assert np.array_equal(a.x_t, b.x_t) and np.array_equal(a.a_prev, b.a_prev)
    with pytest.raises(IndexError):
        generate_oracle(spec, 0)


# -- perturbations ------------------------------------------------------------


def test_zero_noise_identity():
    odo_t, odo_p = (1.0, 0.5, 0.2), (0.8, 0.45, 0.18)
    assert perturb_odometry(odo_t, odo_p, 0.0, 0.0, rng=1) == odo_t
    img = np.random.default_rng(0).uniform(size=(10, 12, 3))
    assert np.array_equal(motion_blur(img, 0), img)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0, 0.05), st.floats(0, 0.016))
def test_odometry_noise_bounds(seed, pct, rot):
    odo_t, odo_p = (1.0, 0.5, 0.2), (0.8, 0.4, 0.18)
    x, y, th = perturb_odometry(odo_t, odo_p, pct, rot, rng=seed)
    assert abs((x - 0.8) / 0.2 - 1) <= pct + 1e-12
    assert abs((y - 0.4) / 0.1 - 1) <= pct + 1e-12
    assert abs(th - 0.2) <= rot + 1e-15


def test_line_kernel_normalized_and_oriented():
    for k in (11, 15, 19):
        ker = line_kernel(k, 0.0)
        assert ker.shape == (k, k) and ker.sum() == pytest.approx(1.0)
        assert np.count_nonzero(ker.sum(axis=1) > 1e-12) == 1
    vertical = line_kernel(11, 90.0)
    assert np.count_nonzero(vertical.sum(axis=0) > 1e-12) == 1


def test_blur_changes_image_and_keeps_mean():
    img = np.zeros((40, 40))
    img[:, 20:] = 1.0
    out = motion_blur(img, 11, angle_deg=0.0)
    assert not np.array_equal(out, img)
    assert np.allclose(out[:, 30:], 1.0, atol=1e-12) and np.all(out[:, :10] == 0.0)
    assert 0 < out[20, 17] < out[20, 20] < out[20, 23] < 1
    assert out.mean() == pytest.approx(img.mean(), abs=1e-12)
    with pytest.raises(ValueError):
        motion_blur(img, 4)


def test_write_synthetic_sequence(tmp_path):
    spec = random_scene(3, n_frames=2, width=128, height=72)
    root = synth.write_synthetic_sequence(spec, tmp_path / "seq", supersample=1)
    rec = load_sequence(root)
    assert len(rec.frames) == 2 and rec.annotated == [0, 1]
    r = render(spec, 1, supersample=1)
    assert np.array_equal(rec.label_image(1), r.labels)
    assert np.abs(rec.image(1) - r.rgb).max() <= 0.5 / 255 + 1e-9
    assert SceneSpec.from_dict(json.loads((tmp_path / "seq" / "scene.json").read_text())).odometry
