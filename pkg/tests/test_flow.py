import json

import numpy as np
import pytest
from scipy import ndimage

from reflectobs.errors import SizeMismatch, ValidationError
from reflectobs.flow import (InjectedFlow, LKFlow, LKParams, TrackResult, forward_backward,
                             pyramid, to_gray, track)


@pytest.fixture(scope="module")
def textured():
    rng = np.random.default_rng(7)
    img = ndimage.gaussian_filter(rng.uniform(size=(120, 160)), 2.0)
    img = (img - img.min()) / (img.max() - img.min())
    return img


def interior_corners(img, n=40, margin=25, seed=0):
    """Points with a well-conditioned structure tensor, away from borders."""
    gy, gx = np.gradient(img)
    sxx = ndimage.uniform_filter(gx * gx, 7)
    syy = ndimage.uniform_filter(gy * gy, 7)
    sxy = ndimage.uniform_filter(gx * gy, 7)
    lam = 0.5 * (sxx + syy - np.sqrt((sxx - syy) ** 2 + 4 * sxy ** 2))
    lam[:margin] = lam[-margin:] = 0
    lam[:, :margin] = lam[:, -margin:] = 0
    idx = np.argsort(lam.ravel())[::-1][: n * 20]
    rng = np.random.default_rng(seed)
    idx = rng.choice(idx, n, replace=False)
    v, u = np.divmod(idx, img.shape[1])
    return np.column_stack([u, v]).astype(float)


def test_gray_conversion():
    rgb = np.zeros((2, 2, 3))
    rgb[..., 0] = 1.0
    assert np.allclose(to_gray(rgb), 0.299)


def test_pyramid_halves():
    levels = pyramid(np.zeros((64, 48)), 3)
    assert [l.shape for l in levels] == [(64, 48), (32, 24), (16, 12)]


def test_identical_images_zero_flow(textured):
    pts = interior_corners(textured)
    out, ok = track(textured, textured, pts)
    assert ok.all()
    assert np.abs(out - pts).max() == 0.0


def test_integer_shift(textured):
    shifted = np.roll(textured, (2, 3), axis=(0, 1))
    pts = interior_corners(textured)
    out, ok = track(shifted, textured, pts)
    err = np.linalg.norm(out - (pts + [3, 2]), axis=1)
    assert ok.mean() > 0.9
    assert err[ok].max() < 0.1


def test_flat_region_fails():
    flat = np.full((64, 64), 0.5)
    _, ok = track(flat, flat, np.array([[32.0, 32.0]]))
    assert not ok[0]


def test_size_mismatch():
    with pytest.raises(SizeMismatch):
        track(np.zeros((10, 10)), np.zeros((10, 11)), np.zeros((1, 2)))


def test_rejects_out_of_range_values():
    with pytest.raises(ValidationError):
        track(np.full((10, 10), 2.0), np.zeros((10, 10)), np.zeros((1, 2)))


def test_forward_backward_identical(textured):
    pts = interior_corners(textured)
    tr = forward_backward(pts, textured, textured)
    assert np.all(tr.fb_error[tr.track_ok] <= 1e-9)
    assert tr.track_ok.all()


def test_forward_backward_shift(textured):
    shifted = np.roll(textured, (2, 3), axis=(0, 1))
    pts = interior_corners(textured)
    tr = forward_backward(pts, shifted, textured)
    # points of `shifted` move by (-3, -2) into `textured`
    assert np.median(tr.fb_error[tr.track_ok]) < 0.2
    assert tr.track_ok.mean() > 0.9


def test_noise_frame_breaks_tracking(textured):
    noise = np.random.default_rng(3).uniform(size=textured.shape)
    pts = interior_corners(textured)
    tr = forward_backward(pts, textured, noise)
    bad = ~tr.track_ok | (tr.fb_error > 5.0)
    assert bad.mean() >= 0.9


def test_failed_tracks_have_infinite_error(textured):
    flat = np.full_like(textured, 0.5)
    tr = forward_backward(np.array([[50.0, 50.0]]), flat, flat)
    assert not tr.track_ok[0]
    assert np.isinf(tr.fb_error[0])


def test_displacement_bound(textured):
    params = LKParams(levels=2, window=7, max_iters=3)
    noise = np.random.default_rng(4).uniform(size=textured.shape)
    pts = interior_corners(textured)
    out, _ = track(noise, textured, pts, params)
    assert np.linalg.norm(out - pts, axis=1).max() <= params.max_displacement()


def test_deterministic(textured):
    shifted = np.roll(textured, (1, -2), axis=(0, 1))
    pts = interior_corners(textured)
    a = forward_backward(pts, shifted, textured)
    b = forward_backward(pts, shifted, textured)
    assert np.array_equal(a.a_prev, b.a_prev) and np.array_equal(a.x_back, b.x_back)


def test_initial_guess_used(textured):
    shifted = np.roll(textured, (0, 12), axis=(0, 1))
    pts = interior_corners(textured, margin=30)
    out, ok = track(shifted, textured, pts, LKParams(levels=1, window=9), initial=pts + [12, 0])
    assert np.abs(out[ok] - (pts[ok] + [12, 0])).max() < 0.1


def test_lk_provider_accepts_rgb(textured):
    rgb = np.dstack([textured] * 3)
    tr = LKFlow()(interior_corners(textured, 5), rgb, rgb)
    assert isinstance(tr, TrackResult) and tr.track_ok.all()


def test_injected_flow_matches_and_fails_missing(tmp_path):
    entries = [{"x_t": [10, 20], "a_prev": [11.5, 19.0], "x_back": [10.25, 20.0], "track_ok": True}]
    path = tmp_path / "flow.json"
    path.write_text(json.dumps(entries))
    tr = InjectedFlow.from_file(path)(np.array([[10.0, 20.0], [30.0, 40.0]]))
    assert np.allclose(tr.a_prev[0], [11.5, 19.0])
    assert tr.fb_error[0] == pytest.approx(0.25)
    assert tr.track_ok.tolist() == [True, False]


def test_track_result_json_round_trip(textured):
    tr = forward_backward(interior_corners(textured, 5), textured, textured)
    back = InjectedFlow(tr.to_json())(tr.x_t)
    assert np.array_equal(back.a_prev, tr.a_prev)
    assert np.array_equal(back.track_ok, tr.track_ok)
