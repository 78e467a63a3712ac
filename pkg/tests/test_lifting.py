import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bevlift.exceptions import ShapeError
from bevlift.geometry import CalibrationSet, CameraIntrinsics, GridSpec, back_project, extend_transform, voxel_centers
from bevlift.lifting import (band_empty_fraction, bilinear_sample, bilinear_sample_vjp, crn_frustum_grid,
                             crn_frustum_occupancy, depth_weight, height_compress, level_coordinate,
                             level_shape, occupancy_weight, one_hot_depth, pixel_coordinate,
                             radar_depth_map, sample_lift, splat_lift, trilinear_sample,
                             trilinear_sample_depth, trilinear_sample_vjp)
from bevlift.nets import Conv1x1Weights, DepthBinSpec
from bevlift.pointcloud import RadarPointCloud
from bevlift.synth import SceneSpec, generate_scene, ideal_depth_distribution, ideal_occupancy

from conftest import RADAR_TO_CAM


# -- independent scalar oracles --------------------------------------------------------

def _corner(coord, n):
    """Two nodes and weights along one axis, or None outside the padded extent."""
    if not (-0.5 <= coord <= n - 0.5):
        return None
    c = min(max(coord, 0.0), n - 1.0)
    i0 = int(math.floor(c))
    i1 = min(i0 + 1, n - 1)
    t = c - i0
    return (i0, 1.0 - t), (i1, t)


def bilinear_oracle(fm, u, v):
    h, w, c = fm.shape
    cx, cy = _corner(u, w), _corner(v, h)
    if cx is None or cy is None:
        return np.zeros(c)
    out = np.zeros(c)
    for yi, wy in cy:
        for xi, wx in cx:
            out += wy * wx * fm[yi, xi]
    return out


def trilinear_oracle(vol, u, v, b):
    h, w, d = vol.shape
    cx, cy, cb = _corner(u, w), _corner(v, h), _corner(b, d)
    if cx is None or cy is None or cb is None:
        return 0.0
    total = 0.0
    for yi, wy in cy:
        for xi, wx in cx:
            for ki, wk in cb:
                total += wy * wx * wk * vol[yi, xi, ki]
    return total


def project_oracle(p, calib):
    """Scalar pinhole projection: returns (u, v, d, in_view)."""
    cam = calib.radar_to_camera.matrix @ np.append(p, 1.0)
    x, y, d = calib.intrinsics.matrix @ cam
    w, h = calib.image_size
    if d <= 1e-6:
        return None
    u, v = x / d, y / d
    return (u, v, d) if (0 <= u < w and 0 <= v < h) else None


def small_camera(width=64, height=40, f=40.0):
    intr = CameraIntrinsics.from_pinhole(f, f, width / 2 - 0.3, height / 2 + 0.2, width, height)
    return CalibrationSet(intr, extend_transform(RADAR_TO_CAM, (0.0, 0.4, 0.1)))


# -- bilinear ------------------------------------------------------------------------------

def test_bilinear_at_node():
    fm = np.random.default_rng(0).standard_normal((5, 6, 3))
    np.testing.assert_array_equal(bilinear_sample(fm, 4.0, 2.0), fm[2, 4])


def test_bilinear_center_of_2x2():
    fm = np.array([[0.0, 1.0], [2.0, 3.0]])
    assert bilinear_sample(fm, 0.5, 0.5)[0] == 1.5


def test_bilinear_far_outside_is_zero():
    fm = np.ones((4, 4, 2))
    np.testing.assert_array_equal(bilinear_sample(fm, -5.0, -5.0), [0.0, 0.0])


def test_bilinear_constant_fills_extent():
    fm = np.full((3, 4, 1), 2.5)
    u = np.array([-0.5, 0.0, 3.0, 3.5, 3.51, -0.51])
    out = bilinear_sample(fm, u, np.full(6, 1.0))[:, 0]
    np.testing.assert_array_equal(out, [2.5, 2.5, 2.5, 2.5, 0.0, 0.0])


def test_bilinear_matches_oracle_random():
    rng = np.random.default_rng(1)
    fm = rng.standard_normal((7, 9, 2))
    u, v = rng.uniform(-2, 11, 300), rng.uniform(-2, 9, 300)
    out = bilinear_sample(fm, u, v)
    for i in range(300):
        np.testing.assert_allclose(out[i], bilinear_oracle(fm, u[i], v[i]), atol=1e-12)


def test_bilinear_rejects_rank():
    with pytest.raises(ShapeError):
        bilinear_sample(np.zeros((2, 2, 2, 2)), 0.0, 0.0)


def _non_degenerate(rng, n, count):
    """Queries at least 1e-2 away from nodes, clamp points and extent edges."""
    out = []
    while len(out) < count:
        q = rng.uniform(-0.45, n - 0.55)
        if abs(q - round(q)) > 1e-2 and abs(q + 0.5) > 1e-2 and abs(q - (n - 0.5)) > 1e-2:
            out.append(q)
    return np.array(out)


def test_bilinear_gradient_finite_difference():
    rng = np.random.default_rng(2)
    fm = rng.standard_normal((6, 8, 3))
    u = _non_degenerate(rng, 8, 100)
    v = _non_degenerate(rng, 6, 100)
    _, gu, gv = bilinear_sample(fm, u, v, return_grad=True)
    h = 1e-3
    fu = (bilinear_sample(fm, u + h, v) - bilinear_sample(fm, u - h, v)) / (2 * h)
    fv = (bilinear_sample(fm, u, v + h) - bilinear_sample(fm, u, v - h)) / (2 * h)
    np.testing.assert_allclose(gu, fu, rtol=1e-4, atol=1e-9)
    np.testing.assert_allclose(gv, fv, rtol=1e-4, atol=1e-9)


def test_bilinear_vjp_is_adjoint():
    rng = np.random.default_rng(3)
    fm = rng.standard_normal((5, 7, 2))
    u, v = rng.uniform(-1, 7, 50), rng.uniform(-1, 5, 50)
    g = rng.standard_normal((50, 2))
    lhs = np.sum(g * bilinear_sample(fm, u, v))
    rhs = np.sum(bilinear_sample_vjp(fm.shape, u, v, g) * fm)
    assert lhs == pytest.approx(rhs, rel=1e-12)


# -- trilinear -------------------------------------------------------------------------------

def test_trilinear_at_node():
    vol = np.random.default_rng(4).random((4, 5, 6))
    assert trilinear_sample(vol, 3.0, 2.0, 4.0) == vol[2, 3, 4]


def test_trilinear_uniform_is_constant():
    vol = np.full((4, 5, 8), 1 / 8)
    rng = np.random.default_rng(5)
    out = trilinear_sample(vol, rng.uniform(-0.5, 4.5, 100), rng.uniform(-0.5, 3.5, 100), rng.uniform(-0.5, 7.5, 100))
    np.testing.assert_allclose(out, 1 / 8, atol=1e-15)


def test_trilinear_matches_eight_corner_oracle():
    rng = np.random.default_rng(6)
    vol = rng.random((6, 7, 9))
    u, v, b = rng.uniform(-1, 7.5, 300), rng.uniform(-1, 6.5, 300), rng.uniform(-1, 9.5, 300)
    out = trilinear_sample(vol, u, v, b)
    for i in range(300):
        assert out[i] == pytest.approx(trilinear_oracle(vol, u[i], v[i], b[i]), abs=1e-12)


def test_trilinear_gradient_finite_difference():
    rng = np.random.default_rng(7)
    vol = rng.random((6, 8, 10))
    u = _non_degenerate(rng, 8, 100)
    v = _non_degenerate(rng, 6, 100)
    b = _non_degenerate(rng, 10, 100)
    _, gu, gv, gb = trilinear_sample(vol, u, v, b, return_grad=True)
    h = 1e-3
    for grad, du, dv, db in ((gu, h, 0, 0), (gv, 0, h, 0), (gb, 0, 0, h)):
        fd = (trilinear_sample(vol, u + du, v + dv, b + db) - trilinear_sample(vol, u - du, v - dv, b - db)) / (2 * h)
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-9)


def test_trilinear_vjp_is_adjoint():
    rng = np.random.default_rng(8)
    vol = rng.random((4, 5, 6))
    u, v, b = rng.uniform(-1, 5, 40), rng.uniform(-1, 4, 40), rng.uniform(-1, 6, 40)
    g = rng.standard_normal(40)
    lhs = np.sum(g * trilinear_sample(vol, u, v, b))
    rhs = np.sum(trilinear_sample_vjp(vol.shape, u, v, b, g) * vol)
    assert lhs == pytest.approx(rhs, rel=1e-12)


# -- level mapping ---------------------------------------------------------------------------

def test_level_coordinate_pixel_centres():
    # pixels 0..7 at stride 8 pool to node 0, whose centre is image coordinate 4
    assert level_coordinate(4.0, 8) == 0.0
    assert pixel_coordinate(1.0, 4) == 6.0
    # every in-view coordinate 0 <= u < W stays inside the padded extent of the coarsest level
    assert level_coordinate(0.0, 32) == -0.5
    assert level_coordinate(1216.0, 32) == 37.5
    assert level_shape((1936, 1216), 32) == (38, 61)


# -- sample_lift / trilinear_sample_depth ----------------------------------------------------

def test_sample_lift_constant_map(forward_calib):
    spec = GridSpec(0, 12.8, -6.4, 6.4, -2, 2, 0.8, 0.8, 0.5)
    centers = voxel_centers(spec)
    out = sample_lift([np.full((60, 80, 2), 3.0), np.full((15, 20, 2), 3.0)], [1, 4], centers, forward_calib)
    assert out.shape == (2,) + spec.shape + (2,)
    view = np.array([[[project_oracle(p, forward_calib) is not None for p in row] for row in plane]
                     for plane in centers])
    assert view.any() and (~view).any()
    assert np.all(out[:, view] == 3.0)
    assert np.all(out[:, ~view] == 0.0)


def test_sample_lift_covers_image_edge_strip():
    # a voxel projecting into the last half pixel (W - 0.5 <= u < W) is in view and must sample
    calib = CalibrationSet(CameraIntrinsics.from_pinhole(50.0, 50.0, 32.0, 20.0, 64, 40),
                           extend_transform(np.eye(3)))
    centers = np.array([[[[(63.8 - 32.0) / 50 * 4.0, (39.9 - 20.0) / 50 * 4.0, 4.0]]]])
    maps = [np.full(level_shape((64, 40), s) + (1,), 2.0) for s in (1, 8, 32)]
    np.testing.assert_array_equal(sample_lift(maps, [1, 8, 32], centers, calib)[:, 0, 0, 0, 0], 2.0)


@pytest.mark.parametrize("seed", range(3))
def test_sample_lift_matches_per_voxel_loop(seed):
    rng = np.random.default_rng(seed)
    calib = small_camera()
    spec = GridSpec(0, 16, -8, 8, -2, 2, 1.0, 1.0, 0.5)
    centers = voxel_centers(spec)
    strides = [1, 2, 4]
    maps = [rng.standard_normal((level_shape(calib.image_size, s)) + (3,)) for s in strides]
    out = sample_lift(maps, strides, centers, calib)
    for idx in np.ndindex(*spec.shape):
        proj = project_oracle(centers[idx], calib)
        for lvl, (fm, s) in enumerate(zip(maps, strides)):
            if proj is None:
                expected = np.zeros(3)
            else:
                expected = bilinear_oracle(fm, proj[0] / s - 0.5, proj[1] / s - 0.5)
            np.testing.assert_allclose(out[(lvl,) + idx], expected, atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_trilinear_depth_matches_per_voxel_loop(seed):
    rng = np.random.default_rng(10 + seed)
    calib = small_camera()
    bins = DepthBinSpec(1.0, 17.0, 16)
    spec = GridSpec(0, 16, -8, 8, -2, 2, 1.0, 1.0, 0.5)
    centers = voxel_centers(spec)
    strides = [2, 4]
    maps = [rng.random((level_shape(calib.image_size, s)) + (16,)) for s in strides]
    out = trilinear_sample_depth(maps, strides, centers, calib, bins)
    assert out.shape == (2,) + spec.shape
    for idx in np.ndindex(*spec.shape):
        proj = project_oracle(centers[idx], calib)
        for lvl, (dm, s) in enumerate(zip(maps, strides)):
            expected = 0.0
            if proj is not None:
                u, v, d = proj
                expected = trilinear_oracle(dm, u / s - 0.5, v / s - 0.5, (d - 1.0) / 1.0 - 0.5)
            assert out[(lvl,) + idx] == pytest.approx(expected, abs=1e-9)


def test_trilinear_depth_rejects_wrong_bins(forward_calib):
    with pytest.raises(ShapeError):
        trilinear_sample_depth([np.zeros((60, 80, 5))], [1], voxel_centers(GridSpec(0, 1, 0, 1, 0, 1, 1, 1, 1)),
                               forward_calib, DepthBinSpec(1, 9, 8))


# -- weighting and compression ------------------------------------------------------------------

def test_depth_weight_identity_and_zero():
    f = np.random.default_rng(11).standard_normal((2, 3, 3, 2, 4))
    np.testing.assert_array_equal(depth_weight(f, np.ones(f.shape[:-1])), f)
    assert not depth_weight(f, np.zeros(f.shape[:-1])).any()
    with pytest.raises(ShapeError):
        depth_weight(f, np.ones((2, 3, 3, 3)))


def test_occupancy_weight_identity_and_zero():
    f = np.random.default_rng(12).standard_normal((2, 3, 3, 2, 4))
    np.testing.assert_array_equal(occupancy_weight(f, np.ones((3, 3, 2))), f)
    assert not occupancy_weight(f, np.zeros((3, 3, 2))).any()
    with pytest.raises(ShapeError):
        occupancy_weight(f, np.ones((3, 3, 3)))


def test_height_compress_averaging_weights():
    rng = np.random.default_rng(13)
    fp, fpp = rng.standard_normal((1, 4, 5, 3, 2)), rng.standard_normal((1, 4, 5, 3, 2))
    n_in = 3 * 2 * 2
    w = Conv1x1Weights(np.full((2, n_in), 1.0 / n_in), np.zeros(2))
    out = height_compress(fp, fpp, w)
    assert out.shape == (4, 5, 2)
    expected = np.concatenate([fp[0], fpp[0]], axis=-1).mean(axis=(2, 3))
    np.testing.assert_allclose(out[..., 0], expected, atol=1e-12)
    np.testing.assert_allclose(out[..., 1], expected, atol=1e-12)


def test_height_compress_block_projection():
    rng = np.random.default_rng(14)
    fp = rng.standard_normal((2, 3, 3, 2, 2))
    z, c = 2, 2
    weight = rng.standard_normal((c, z * 2 * c))
    for k in range(z):
        weight[:, k * 2 * c + c:(k + 1) * 2 * c] = 0.0  # the F'' block of slice k
    w = Conv1x1Weights(weight, np.zeros(c))
    a = height_compress(fp, np.zeros_like(fp), w)
    b = height_compress(fp, rng.standard_normal(fp.shape), w)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_height_compress_sums_levels():
    rng = np.random.default_rng(15)
    fp, fpp = rng.standard_normal((3, 2, 2, 2, 1)), rng.standard_normal((3, 2, 2, 2, 1))
    w = Conv1x1Weights(rng.standard_normal((1, 4)), np.zeros(1))
    one = height_compress(fp.sum(0, keepdims=True), fpp.sum(0, keepdims=True), w)
    np.testing.assert_allclose(height_compress(fp, fpp, w), one, atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1))
def test_weighting_is_monotone_masking(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((2, 3, 4, 2, 3))
    ds, occ = rng.random((2, 3, 4, 2)), rng.random((3, 4, 2))
    assert np.all(np.abs(depth_weight(f, ds)) <= np.abs(f))
    assert np.all(np.abs(occupancy_weight(f, occ)) <= np.abs(f))


@given(st.integers(0, 2 ** 32 - 1), st.floats(-4, 4), st.floats(-4, 4))
def test_weighting_is_bilinear(seed, a, b):
    rng = np.random.default_rng(seed)
    f1, f2 = rng.standard_normal((2, 2, 2, 2, 2, 2))
    w1, w2 = rng.random((2, 2, 2, 2, 2))
    np.testing.assert_allclose(depth_weight(a * f1 + b * f2, w1),
                               a * depth_weight(f1, w1) + b * depth_weight(f2, w1), atol=1e-12)
    np.testing.assert_allclose(depth_weight(f1, a * w1 + b * w2),
                               a * depth_weight(f1, w1) + b * depth_weight(f1, w2), atol=1e-12)
    o1, o2 = w1[0], w2[0]
    np.testing.assert_allclose(occupancy_weight(f1, a * o1 + b * o2),
                               a * occupancy_weight(f1, o1) + b * occupancy_weight(f1, o2), atol=1e-12)


# -- synthetic oracles for the weighting stages ---------------------------------------------------

@pytest.fixture(scope="module")
def synth_case(vod_cfg):
    calib = small_camera(242, 152, 186.9)
    spec = GridSpec(0, 51.2, -25.6, 25.6, -3, 2, 0.8, 0.8, 0.5)
    scene = generate_scene(SceneSpec(3, {"car": 4, "pedestrian": 3, "cyclist": 2}, calib, vod_cfg.pcr))
    return calib, spec, scene


def test_one_hot_depth_concentrates_on_rendered_bins(synth_case):
    calib, spec, scene = synth_case
    bins = DepthBinSpec(1.0, 51.2, 64)
    dist, labelled = ideal_depth_distribution(scene.depth_map, bins)
    centers = voxel_centers(spec)
    ds = trilinear_sample_depth([dist], [1], centers, calib, bins)[0]
    f = np.ones((1,) + spec.shape + (1,))
    fp = depth_weight(f, ds[None])[0, ..., 0]
    assert fp.any()
    k_map = np.where(labelled, bins.index(scene.depth_map), -10)
    h, w = k_map.shape
    for idx in zip(*np.nonzero(fp)):
        u, v, d = project_oracle(centers[idx], calib)
        b = bins.coordinate(d)
        xs = {min(max(int(math.floor(min(max(u - 0.5, 0), w - 1))) + o, 0), w - 1) for o in (0, 1)}
        ys = {min(max(int(math.floor(min(max(v - 0.5, 0), h - 1))) + o, 0), h - 1) for o in (0, 1)}
        assert any(abs(b - k_map[y, x]) < 1 for y in ys for x in xs)


def test_ideal_occupancy_confines_features_to_boxes(synth_case):
    _, spec, scene = synth_case
    occ = ideal_occupancy(scene.boxes, spec)
    f = np.random.default_rng(16).random((2,) + spec.shape + (3,)) + 0.1
    fpp = occupancy_weight(f, occ)
    centers = voxel_centers(spec)
    inside = np.zeros(spec.shape, dtype=bool)
    for box in scene.boxes:
        inside |= box.contains(centers)
    assert np.any(fpp[:, inside])
    assert not np.any(fpp[:, ~inside])


# -- splatting ------------------------------------------------------------------------------------

def test_splat_single_ray(forward_calib):
    bins = DepthBinSpec(1.0, 21.0, 20)
    spec = GridSpec(0, 25.6, -12.8, 12.8, -3, 2, 0.4, 0.4, 0.5)
    fm = np.ones((15, 20, 2))
    dm = np.zeros((15, 20, bins.D))
    dm[7, 11, 9] = 1.0
    grid, mask = splat_lift([fm], [dm], [4], forward_calib, spec, bins)
    nz = np.argwhere(np.any(grid != 0, axis=-1))
    assert len(nz) == 1
    u, v = pixel_coordinate(11, 4), pixel_coordinate(7, 4)
    p = back_project(np.array([u]), np.array([v]), np.array([bins.centers()[9]]), forward_calib)[0]
    expected = np.floor((p - spec.lower) / spec.cell).astype(int)
    np.testing.assert_array_equal(nz[0], expected)
    np.testing.assert_allclose(grid[tuple(expected)], [1.0, 1.0])
    assert mask.sum() > 1  # every pixel/bin point marks a hit regardless of its probability


def test_splat_zero_depth_gives_zero_grid(forward_calib):
    bins = DepthBinSpec(1.0, 21.0, 20)
    spec = GridSpec(0, 25.6, -12.8, 12.8, -3, 2, 0.4, 0.4, 0.5)
    grid, _ = splat_lift([np.ones((15, 20, 2))], [np.zeros((15, 20, 20))], [4], forward_calib, spec, bins)
    assert not grid.any()


def test_splat_conserves_in_grid_mass(forward_calib):
    bins = DepthBinSpec(1.0, 9.0, 8)
    spec = GridSpec(0, 12.8, -12.8, 12.8, -6, 6, 0.4, 0.4, 0.5)
    rng = np.random.default_rng(17)
    fm = rng.random((15, 20, 1))
    dm = rng.random((15, 20, 8))
    dm /= dm.sum(-1, keepdims=True)
    grid, _ = splat_lift([fm], [dm], [4], forward_calib, spec, bins)
    # every frustum point of this narrow camera lands inside the wide grid
    assert grid.sum() == pytest.approx(fm.sum(), rel=1e-12)


def test_band_empty_fraction_counts_covered_only():
    centers = np.zeros((4, 1, 1, 3))
    centers[:, 0, 0, 0] = [5, 10, 30, 60]
    mask = np.array([True, False, False, False]).reshape(4, 1, 1)
    covered = np.array([True, True, True, False]).reshape(4, 1, 1)
    out = band_empty_fraction(mask, covered, centers, [(0, 25), (25, 50), (50, 70)])
    assert out[:2] == [0.5, 1.0]
    assert math.isnan(out[2])


# -- radar depth supervision and CRN occupancy ------------------------------------------------------

def test_radar_depth_map_uses_containing_pixel(simple_calib):
    d = 7.5
    p = np.array([[(100.4 - 320) * d / 100, (50.6 - 240) * d / 100, d]])
    out = radar_depth_map(RadarPointCloud(p), simple_calib)
    assert out.shape == (480, 640)
    assert out[50, 100] == pytest.approx(7.5)
    assert np.count_nonzero(out) == 1


def test_radar_depth_map_averages_collisions(simple_calib):
    p = np.array([[0.0, 0.0, 4.0], [0.001, 0.0, 6.0]])
    out = radar_depth_map(RadarPointCloud(p), simple_calib)
    assert out[240, 320] == pytest.approx(5.0)


def test_radar_depth_map_empty(simple_calib):
    assert not radar_depth_map(RadarPointCloud(np.zeros((0, 3))), simple_calib).any()


def test_one_hot_depth_labels():
    bins = DepthBinSpec(1.0, 5.0, 4)
    dist, labelled = one_hot_depth(np.array([[0.0, 1.5], [4.99, 7.0]]), bins)
    np.testing.assert_array_equal(labelled, [[False, True], [True, False]])
    np.testing.assert_array_equal(dist.sum(-1), [[0, 1], [1, 0]])
    assert dist[0, 1, 0] == 1.0 and dist[1, 0, 3] == 1.0


def test_crn_empty_cloud(simple_calib):
    bins = DepthBinSpec(1.0, 11.0, 10)
    spec = GridSpec(-1.5, 1.5, -1.5, 1.5, 5, 6, 1, 1, 1)
    occ = crn_frustum_occupancy(RadarPointCloud(np.zeros((0, 3))), simple_calib, (480, 640), 1,
                                voxel_centers(spec), bins)
    assert occ.shape == spec.shape
    assert not occ.any()


def test_crn_point_at_voxel_centre():
    # with an identity extrinsic the centre (0, 0, 5.5) projects to the centre of pixel (240, 320)
    # and to bin centre 4
    calib = CalibrationSet(CameraIntrinsics.from_pinhole(100.0, 100.0, 320.5, 240.5, 640, 480),
                           extend_transform(np.eye(3)))
    bins = DepthBinSpec(1.0, 11.0, 10)
    spec = GridSpec(-1.5, 1.5, -1.5, 1.5, 5, 6, 1, 1, 1)
    cloud = RadarPointCloud(np.array([[0.0, 0.0, 5.5]]))
    grid = crn_frustum_grid(cloud, calib, (480, 640), 1, bins)
    assert grid.sum() == 1.0 and grid[240, 320, 4] == 1.0
    occ = crn_frustum_occupancy(cloud, calib, (480, 640), 1, voxel_centers(spec), bins)
    assert occ[1, 1, 0] == 1.0
    assert occ.sum() == 1.0
