import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bevlift.exceptions import ConfigError, ShapeError
from bevlift.nets import (Conv1x1Weights, DepthBinSpec, HeadWeights, depth_net, fuse_bev, occupancy_net,
                          seeded_weights, sigmoid, softmax)

# sigmoid(10) = 1 / (1 + exp(-10)), evaluated once with decimal at 30 digits and frozen
SIGMOID_10 = 0.9999546021312976


def test_occupancy_zero_weights_is_half():
    out = occupancy_net(np.random.default_rng(0).standard_normal((4, 5, 3)), Conv1x1Weights.zeros(6, 3))
    assert out.shape == (4, 5, 6)
    assert np.all(out == 0.5)


def test_occupancy_bias_ten():
    w = Conv1x1Weights(np.zeros((2, 3)), np.full(2, 10.0))
    out = occupancy_net(np.ones((2, 2, 3)), w)
    np.testing.assert_allclose(out, SIGMOID_10, rtol=0, atol=1e-15)


@pytest.mark.parametrize("c_p", [1, 4, 17])
def test_occupancy_shape_any_channels(c_p):
    assert occupancy_net(np.zeros((3, 2, c_p)), Conv1x1Weights.zeros(5, c_p)).shape == (3, 2, 5)


def test_occupancy_channel_mismatch():
    with pytest.raises(ShapeError):
        occupancy_net(np.zeros((3, 2, 4)), Conv1x1Weights.zeros(5, 3))


def test_occupancy_strict_bounds_under_saturation():
    w = Conv1x1Weights(np.zeros((2, 1)), np.array([1e4, -1e4]))
    out = occupancy_net(np.zeros((1, 1, 1)), w)
    assert 0.0 < out[0, 0, 1] < out[0, 0, 0] < 1.0


def test_depth_zero_weights_uniform():
    out = depth_net(np.random.default_rng(1).standard_normal((3, 4, 2)), Conv1x1Weights.zeros(8, 2))
    np.testing.assert_allclose(out, 1.0 / 8, rtol=0, atol=1e-15)


def test_depth_one_hot_bias():
    bias = np.zeros(16)
    bias[5] = 20.0
    out = depth_net(np.zeros((2, 2, 3)), Conv1x1Weights(np.zeros((16, 3)), bias))
    assert np.all(out[..., 5] >= 1 - 1e-6)


def test_depth_per_level_independent():
    rng = np.random.default_rng(2)
    levels = [rng.standard_normal((8, 8, 3)), rng.standard_normal((4, 4, 3)), rng.standard_normal((2, 2, 3))]
    heads = [Conv1x1Weights(rng.standard_normal((6, 3)), rng.standard_normal(6)) for _ in levels]
    outs = depth_net(levels, heads)
    for f, w, o in zip(levels, heads, outs):
        np.testing.assert_array_equal(o, depth_net(f, w))
    with pytest.raises(ShapeError):
        depth_net(levels, heads[:2])


def test_softmax_large_logits_stable():
    out = softmax(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(out, [0.5, 0.5, 0.0])


def test_sigmoid_symmetric():
    x = np.linspace(-40, 40, 81)
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)


def test_fuse_identity_on_radar_block():
    rng = np.random.default_rng(3)
    radar, image = rng.standard_normal((4, 4, 3)), rng.standard_normal((4, 4, 2))
    w = Conv1x1Weights(np.hstack([np.eye(3), np.zeros((3, 2))]), np.zeros(3))
    np.testing.assert_array_equal(fuse_bev(radar, image, w), radar)


def test_fuse_zero_image_independent_of_image_weights():
    rng = np.random.default_rng(4)
    radar = rng.standard_normal((3, 3, 2))
    wa = Conv1x1Weights(np.hstack([np.ones((4, 2)), rng.standard_normal((4, 5))]), np.zeros(4))
    wb = Conv1x1Weights(np.hstack([np.ones((4, 2)), rng.standard_normal((4, 5))]), np.zeros(4))
    zero = np.zeros((3, 3, 5))
    np.testing.assert_array_equal(fuse_bev(radar, zero, wa), fuse_bev(radar, zero, wb))


def test_fuse_matches_per_cell_matvec():
    rng = np.random.default_rng(5)
    radar, image = rng.standard_normal((5, 6, 3)), rng.standard_normal((5, 6, 4))
    w = Conv1x1Weights(rng.standard_normal((7, 7)), rng.standard_normal(7))
    out = fuse_bev(radar, image, w)
    for x in range(5):
        for y in range(6):
            expected = w.weight @ np.concatenate([radar[x, y], image[x, y]]) + w.bias
            np.testing.assert_allclose(out[x, y], expected, atol=1e-12)


def test_fuse_shape_mismatch():
    with pytest.raises(ShapeError):
        fuse_bev(np.zeros((3, 3, 1)), np.zeros((3, 4, 1)), Conv1x1Weights.zeros(1, 2))


def test_conv_rejects_bad_weights():
    with pytest.raises(ShapeError):
        Conv1x1Weights(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ShapeError):
        Conv1x1Weights(np.array([[np.inf]]), np.zeros(1))


# -- depth bins -----------------------------------------------------------------------

def test_depth_bins_default():
    bins = DepthBinSpec()
    assert bins.D == 64
    assert bins.width == pytest.approx(50.2 / 64)
    assert bins.coordinate(bins.centers()[7]) == pytest.approx(7.0)
    assert list(bins.index([0.5, 1.0, 1.78, 51.2])) == [-1, 0, 0, -1]


def test_depth_bins_invalid():
    with pytest.raises(ConfigError):
        DepthBinSpec(0.0, 10.0, 4)
    with pytest.raises(ConfigError):
        DepthBinSpec(1.0, 10.0, 0)


# -- weights --------------------------------------------------------------------------

def test_weights_tensor_round_trip():
    w = seeded_weights(7, 3, 3, 10, 64, 3, seed=5)
    back = HeadWeights.from_tensors(w.to_tensors(), 3)
    for key, value in w.to_tensors().items():
        np.testing.assert_array_equal(back.to_tensors()[key], value)
    assert {"occ.weight", "occ.bias", "depth.2.weight", "fuse.bias"} <= set(w.to_tensors())


def test_weights_missing_key():
    tensors = seeded_weights(2, 2, 1, 2, 4, 1).to_tensors()
    del tensors["fuse.bias"]
    with pytest.raises(ConfigError, match="fuse.bias"):
        HeadWeights.from_tensors(tensors, 1)


def test_seeded_weights_deterministic_and_prior():
    a = seeded_weights(4, 3, 2, 5, 8, 2, seed=9)
    b = seeded_weights(4, 3, 2, 5, 8, 2, seed=9)
    for key, value in a.to_tensors().items():
        np.testing.assert_array_equal(value, b.to_tensors()[key])
    np.testing.assert_allclose(sigmoid(a.heatmap.bias), 0.01)


# -- properties -------------------------------------------------------------------------

@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 40))
def test_depth_distribution_normalized(seed, d):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((5, 7, 3)) * 10
    w = Conv1x1Weights(rng.standard_normal((d, 3)) * 5, rng.standard_normal(d) * 5)
    out = depth_net(feats, w)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-6)


@given(st.integers(0, 2 ** 32 - 1))
def test_occupancy_strictly_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    w = Conv1x1Weights(rng.standard_normal((4, 3)) * 100, rng.standard_normal(4) * 100)
    out = occupancy_net(rng.standard_normal((6, 6, 3)) * 10, w)
    assert np.all((out > 0) & (out < 1))


@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3))
def test_heads_linear_then_pointwise(seed, alpha):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 3, 2))
    w = Conv1x1Weights(rng.standard_normal((5, 2)), np.zeros(5))
    logits = np.einsum("oc,xyc->xyo", w.weight, alpha * x)
    np.testing.assert_allclose(occupancy_net(alpha * x, w), 1 / (1 + np.exp(-logits)), atol=1e-12)
    ex = np.exp(logits - logits.max(-1, keepdims=True))
    np.testing.assert_allclose(depth_net(alpha * x, w), ex / ex.sum(-1, keepdims=True), atol=1e-12)
