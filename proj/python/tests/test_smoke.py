import numpy as np
import pytest

import dyn4d


def test_synthetic_scene_shapes_and_static_flow():
    s = dyn4d.synthetic_scene(seed=1, static=True)
    assert s["image_t"].shape == (64, 64, 3)
    assert s["points_t"].shape == (64, 64, 3)
    assert np.all(s["flow_t"] == 0.0)
    assert np.all((s["image_t"] >= 0.0) & (s["image_t"] <= 1.0))


def test_render_endpoints_match_interpolation():
    scene = dyn4d.synthetic_scene(seed=2)["scene"]
    a = scene.render(dt=0.0, target="t")
    b = scene.interpolate(dt=0.0, view_fraction=0.0)
    np.testing.assert_array_equal(a["color"], b["color"])
    c = scene.render(dt=1.0, target="t1")
    d = scene.interpolate(dt=1.0, view_fraction=1.0)
    np.testing.assert_array_equal(c["point"], d["point"])


def test_scene_bytes_round_trip(tmp_path):
    scene = dyn4d.synthetic_scene(seed=3)["scene"]
    blob = scene.to_bytes()
    again = dyn4d.scene_from_bytes(blob)
    assert again.to_bytes() == blob
    path = tmp_path / "s.d4gs"
    again.save(str(path))
    assert dyn4d.load_scene(str(path)).to_bytes() == blob


def test_init_and_short_fit_reduce_loss():
    s = dyn4d.synthetic_scene(seed=4, static=True)
    K = s["intrinsics"]
    scene = dyn4d.init_scene(s["image_t"], s["image_t1"], K)
    assert scene.num_gaussians == 2 * 64 * 64
    t0, t1 = scene.opacity_maps()
    assert np.all(t0 == 0.5) and np.all(t1 == 0.5)
    fitted, trace, converged = dyn4d.fit(scene, s["image_t"], s["image_t1"], iterations=8)
    assert converged and len(trace) == 8
    assert trace[-1] < trace[0]


def test_metrics():
    gt = np.zeros((2, 2, 3))
    gt[..., 2] = 2.0
    pred = gt.copy()
    pred[0, 0] += [0.0, 3.0, 4.0]
    mask = np.zeros((2, 2), dtype=bool)
    mask[0, 0] = True
    assert dyn4d.point_epe(pred, gt, mask) == pytest.approx(5.0)
    depth = np.full((3, 3), 2.0)
    assert dyn4d.depth_abs_rel(1.3 * depth, depth) == pytest.approx(0.3)
    assert dyn4d.depth_delta(1.3 * depth, depth) == 0.0
    assert dyn4d.depth_delta(1.2 * depth, depth) == 100.0
    aligned, scale, skipped = dyn4d.median_scale_align(2.0 * gt + 1.0, 4.0 * gt + 2.0)
    assert scale == pytest.approx(2.0) and not skipped


def test_gradcheck_passes():
    passed, text = dyn4d.gradcheck(seed=7)
    assert passed, text


def test_contract_errors_raise_value_error():
    with pytest.raises(ValueError):
        dyn4d.point_epe(np.zeros((2, 2, 3)), np.zeros((3, 3, 3)))


def test_flow_colors():
    flow = np.zeros((1, 3, 2))
    flow[0, 1] = [1.0, 0.0]
    flow[0, 2] = [-1.0, 0.0]
    img = dyn4d.flow_to_color(flow, max_norm=1.0)
    np.testing.assert_allclose(img[0, 0], [1.0, 1.0, 1.0])
    assert not np.allclose(img[0, 1], img[0, 2])
