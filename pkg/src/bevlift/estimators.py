"""scikit-learn style wrappers around the functional core.

* :class:`ChannelNormalizer` learns per-channel mean/std and applies the
  ``(x - mean) / std`` normalization, leaving skipped channels untouched.
* :class:`ViewTransformer` turns frames into image BEV tensors with one lifting strategy.
* :class:`RadarCameraDetector` fits the radar and image normalizers on training
  frames and predicts detections.
"""

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_array
from .evaluation import EvalRegion, average_precision, mean_ap
from .exceptions import ConfigError
from .pointcloud import NormalizationStats, denormalize, normalize
from .pipeline import _radar_values, resolve_weights, run_frames


class ChannelNormalizer(TransformerMixin, BaseEstimator):
    """Per-channel standardization over the trailing axis.

    Parameters
    ----------
    skip_channels : tuple of int
        Channel indices that are passed through unchanged (e.g. x, y, z, t).
    """

    def __init__(self, skip_channels=()):
        self.skip_channels = skip_channels

    def fit(self, X, y=None):
        arr = as_float_array(X, "X")
        if arr.ndim < 2:
            raise ValueError(f"expected at least 2-d input, got shape {arr.shape}")
        flat = arr.reshape(-1, arr.shape[-1])
        self.stats_ = NormalizationStats.from_data(flat, tuple(self.skip_channels))
        self.n_features_in_ = arr.shape[-1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return normalize(X, self.stats_, tuple(self.skip_channels))

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        return denormalize(X, self.stats_, tuple(self.skip_channels))

    @property
    def mean_(self):
        return self.stats_.means

    @property
    def scale_(self):
        return self.stats_.stds


class ViewTransformer(TransformerMixin, BaseEstimator):
    """Frames to ``n x X x Y x C_I`` image BEV features.

    ``fit`` only resolves the weights (from ``weights``, the config's archive or the
    seeded defaults); nothing is learned.
    """

    def __init__(self, config, strategy=None, weights=None, n_jobs=1):
        self.config = config
        self.strategy = strategy
        self.weights = weights
        self.n_jobs = n_jobs

    def fit(self, frames=None, y=None):
        self.weights_ = resolve_weights(self.config, self.weights)
        return self

    def transform(self, frames):
        check_is_fitted(self, "weights_")
        outs = run_frames(self.config, list(frames), self.weights_, strategy=self.strategy, jobs=self.n_jobs)
        self.masks_ = np.stack([o.mask for o in outs]) if outs else None
        return np.stack([o.image_bev for o in outs]) if outs else np.zeros((0,))


class RadarCameraDetector(BaseEstimator):
    """End-to-end detector over :class:`~bevlift.pipeline.Frame` lists."""

    def __init__(self, config, strategy=None, weights=None, n_jobs=1):
        self.config = config
        self.strategy = strategy
        self.weights = weights
        self.n_jobs = n_jobs

    def fit(self, frames, y=None):
        """Learn radar and image normalization stats from the training frames."""
        frames = list(frames)
        if not frames:
            raise ValueError("fit needs at least one frame")
        cfg = self.config
        skip = tuple(i for i, c in enumerate(cfg.radar_layout) if c in cfg.radar_skip)
        radar = np.concatenate([_radar_values(f.cloud, cfg) for f in frames], axis=0)
        if len(radar) == 0:
            raise ValueError("training frames contain no radar points")
        self.radar_normalizer_ = ChannelNormalizer(skip).fit(radar)
        pixels = np.concatenate([np.asarray(f.image, dtype=np.float64).reshape(-1, cfg.image_channels)
                                 for f in frames], axis=0)
        self.image_normalizer_ = ChannelNormalizer().fit(pixels)
        self.weights_ = resolve_weights(cfg, self.weights)
        return self

    def predict(self, frames):
        check_is_fitted(self, "weights_")
        outs = run_frames(self.config, list(frames), self.weights_, self.radar_normalizer_.stats_,
                          self.image_normalizer_.stats_, self.strategy, self.n_jobs)
        return [o.detections for o in outs]

    def score(self, frames, y=None):
        """EAA mAP of the predictions against each frame's ``boxes``."""
        frames = list(frames)
        if y is None:
            y = [f.boxes for f in frames]
        if len(y) != len(frames):
            raise ConfigError("one ground-truth list per frame is required")
        dets = [d for ds in self.predict(frames) for d in ds]
        gts = [g for f, gs in zip(frames, y) for g in _with_frame(gs, f.frame_id)]
        cfg = self.config
        region = EvalRegion.entire()
        return mean_ap(average_precision(dets, gts, cfg.match_config, region, c) for c in range(cfg.n_classes))


def _with_frame(boxes, frame_id):
    return [b if b.frame == frame_id else replace(b, frame=frame_id) for b in boxes]
