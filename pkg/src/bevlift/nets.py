"""Per-cell linear heads: occupancy, depth-bin classifier and BEV fusion.

Each learned ``1x1`` convolution is a plain affine map over the trailing channel
axis, so the heads are defined for any leading spatial shape.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ShapeError

# sigmoid outputs are clipped to the open interval (0, 1)
_OCC_LO = np.finfo(np.float64).tiny
_OCC_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class Conv1x1Weights:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"conv weights: weight {w.shape} and bias {b.shape} disagree")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ShapeError("conv weights contain non-finite entries")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def c_in(self):
        return self.weight.shape[1]

    @property
    def c_out(self):
        return self.weight.shape[0]

    @classmethod
    def zeros(cls, c_out, c_in):
        return cls(np.zeros((c_out, c_in)), np.zeros(c_out))

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"expected {self.c_in} input channels, got {x.shape[-1]}")
        flat = x.reshape(-1, self.c_in)
        out = flat @ self.weight.T + self.bias
        return out.reshape(x.shape[:-1] + (self.c_out,))


@dataclass(frozen=True)
class DepthBinSpec:
    """``D`` uniform depth bins over ``[d_min, d_max)``."""

    d_min: float = 1.0
    d_max: float = 51.2
    D: int = 64

    def __post_init__(self):
        if not (self.d_min > 0 and self.d_max > self.d_min and int(self.D) >= 1):
            raise ConfigError("depth bins need 0 < d_min < d_max and D >= 1")
        object.__setattr__(self, "D", int(self.D))

    @property
    def width(self):
        return (self.d_max - self.d_min) / self.D

    def centers(self):
        return self.d_min + (np.arange(self.D) + 0.5) * self.width

    def coordinate(self, depth):
        """Continuous bin coordinate; bin ``k`` is centred on ``k``."""
        return (np.asarray(depth, dtype=np.float64) - self.d_min) / self.width - 0.5

    def index(self, depth):
        """Discrete bin index, ``-1`` where the depth falls outside ``[d_min, d_max)``."""
        k = np.floor((np.asarray(depth, dtype=np.float64) - self.d_min) / self.width).astype(np.int64)
        return np.where((k >= 0) & (k < self.D), k, -1)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def occupancy_net(radar_bev, weights):
    """``X x Y x C_P`` radar BEV features to an ``X x Y x Z`` occupancy grid in (0, 1)."""
    radar_bev = np.asarray(radar_bev, dtype=np.float64)
    if radar_bev.ndim != 3:
        raise ShapeError(f"radar BEV must be X x Y x C, got {radar_bev.shape}")
    return np.clip(sigmoid(weights(radar_bev)), _OCC_LO, _OCC_HI)


def depth_net(pv_features, weights):
    """Depth-bin distribution per pixel; accepts one map or a list of levels."""
    if isinstance(pv_features, (list, tuple)):
        if isinstance(weights, (list, tuple)):
            if len(weights) != len(pv_features):
                raise ShapeError("one depth head per feature level is required")
            return [depth_net(f, w) for f, w in zip(pv_features, weights)]
        return [depth_net(f, weights) for f in pv_features]
    feats = np.asarray(pv_features, dtype=np.float64)
    if feats.ndim != 3:
        raise ShapeError(f"PV features must be H x W x C, got {feats.shape}")
    return softmax(weights(feats), axis=-1)


def fuse_bev(radar_bev, image_bev, weights):
    radar_bev = np.asarray(radar_bev, dtype=np.float64)
    image_bev = np.asarray(image_bev, dtype=np.float64)
    if radar_bev.shape[:2] != image_bev.shape[:2]:
        raise ShapeError(f"BEV spatial shapes differ: {radar_bev.shape[:2]} vs {image_bev.shape[:2]}")
    return weights(np.concatenate([radar_bev, image_bev], axis=-1))


@dataclass(frozen=True)
class HeadWeights:
    """Everything loaded from a weight archive."""

    occupancy: Conv1x1Weights
    depth: tuple
    compress: Conv1x1Weights
    fuse: Conv1x1Weights
    heatmap: Conv1x1Weights
    regression: Conv1x1Weights

    def to_tensors(self):
        out = {}
        for key, conv in (("occ", self.occupancy), ("compress", self.compress), ("fuse", self.fuse),
                          ("head.heatmap", self.heatmap), ("head.reg", self.regression)):
            out[f"{key}.weight"], out[f"{key}.bias"] = conv.weight, conv.bias
        for lvl, conv in enumerate(self.depth):
            out[f"depth.{lvl}.weight"], out[f"depth.{lvl}.bias"] = conv.weight, conv.bias
        return out

    @classmethod
    def from_tensors(cls, tensors, n_levels):
        def conv(key):
            try:
                return Conv1x1Weights(tensors[f"{key}.weight"], tensors[f"{key}.bias"])
            except KeyError as exc:
                raise ConfigError(f"weight archive lacks {exc.args[0]!r}") from None

        return cls(
            occupancy=conv("occ"),
            depth=tuple(conv(f"depth.{lvl}") for lvl in range(n_levels)),
            compress=conv("compress"),
            fuse=conv("fuse"),
            heatmap=conv("head.heatmap"),
            regression=conv("head.reg"),
        )

    def with_occupancy_bias(self, value):
        occ = Conv1x1Weights(np.zeros_like(self.occupancy.weight), np.full(self.occupancy.c_out, float(value)))
        return HeadWeights(occ, self.depth, self.compress, self.fuse, self.heatmap, self.regression)


def seeded_weights(c_radar, c_image, n_levels, Z, D, n_classes, c_fused=16, n_reg=8, seed=0,
                   heatmap_prior=0.01):
    """Deterministic small random weights (He-style scale, zero biases).

    The heatmap bias starts at ``logit(heatmap_prior)`` so blank input scores low.
    """
    rng = np.random.default_rng(seed)

    def conv(c_out, c_in, bias=0.0):
        w = rng.standard_normal((c_out, c_in)) * np.sqrt(2.0 / max(c_in, 1))
        return Conv1x1Weights(w, np.full(c_out, bias))

    occ = conv(Z, c_radar)
    depth = tuple(conv(D, c_image) for _ in range(n_levels))
    compress = conv(c_image, Z * 2 * c_image)
    fuse = conv(c_fused, c_radar + c_image)
    prior = float(np.log(heatmap_prior / (1.0 - heatmap_prior)))
    heatmap = conv(n_classes, c_fused, bias=prior)
    reg = conv(n_reg, c_fused)
    return HeadWeights(occ, depth, compress, fuse, heatmap, reg)
