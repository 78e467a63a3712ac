"""Radar point-cloud containers, normalization, cropping, FOV filtering,
pillarization and flip augmentation."""

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._validation import as_float_array
from .exceptions import DataError, InvalidStatsError, ShapeError
from .geometry import project_points

DEFAULT_LAYOUT = ("x", "y", "z", "rcs", "v_r", "v_r_comp", "t")
GEOMETRIC_CHANNELS = ("x", "y", "z", "t")


@dataclass(frozen=True)
class RadarPointCloud:
    """``N`` radar returns: positions (m), extra features and timestamps.

    ``feature_names`` labels the columns of ``features``; an empty cloud is legal.
    """

    positions: np.ndarray
    features: np.ndarray = None
    timestamps: np.ndarray = None
    feature_names: tuple = ()

    def __post_init__(self):
        pos = as_float_array(self.positions, "positions")
        if pos.size == 0:
            pos = pos.reshape(0, 3)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ShapeError(f"positions must be (N, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise DataError("radar positions must be finite")
        n = len(pos)
        feats = np.zeros((n, 0)) if self.features is None else as_float_array(self.features, "features")
        if feats.size == 0 and feats.ndim != 2:
            feats = np.zeros((n, 0))
        if feats.ndim != 2 or len(feats) != n:
            raise ShapeError(f"features must be (N, F) with N={n}, got {feats.shape}")
        ts = np.zeros(n) if self.timestamps is None else as_float_array(self.timestamps, "timestamps").reshape(-1)
        if len(ts) != n:
            raise ShapeError("timestamps length must match positions")
        names = tuple(self.feature_names) or tuple(f"f{i}" for i in range(feats.shape[1]))
        if len(names) != feats.shape[1]:
            raise ShapeError("feature_names length must match feature columns")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return len(self.positions)

    @property
    def channel_names(self):
        return ("x", "y", "z", *self.feature_names, "t")

    def to_array(self):
        """Row-major ``N x (3 + F + 1)`` matrix in ``channel_names`` order."""
        return np.concatenate([self.positions, self.features, self.timestamps[:, None]], axis=1)

    @classmethod
    def from_array(cls, array, layout=DEFAULT_LAYOUT):
        arr = np.asarray(array, dtype=np.float64)
        layout = tuple(layout)
        if arr.ndim != 2 or arr.shape[1] != len(layout):
            raise ShapeError(f"expected (N, {len(layout)}) for layout {layout}, got {arr.shape}")
        missing = {"x", "y", "z"} - set(layout)
        if missing:
            raise DataError(f"layout lacks position channels {sorted(missing)}")
        col = {name: i for i, name in enumerate(layout)}
        pos = arr[:, [col["x"], col["y"], col["z"]]]
        ts = arr[:, col["t"]] if "t" in col else None
        extra = [n for n in layout if n not in ("x", "y", "z", "t")]
        feats = arr[:, [col[n] for n in extra]] if extra else np.zeros((len(arr), 0))
        return cls(pos, feats, ts, tuple(extra))

    def subset(self, mask):
        return RadarPointCloud(self.positions[mask], self.features[mask], self.timestamps[mask], self.feature_names)


@dataclass(frozen=True)
class NormalizationStats:
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.means, dtype=np.float64).reshape(-1)
        sd = np.asarray(self.stds, dtype=np.float64).reshape(-1)
        if mu.shape != sd.shape:
            raise InvalidStatsError("means and stds must have the same length")
        if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(sd)):
            raise InvalidStatsError("normalization stats must be finite")
        if np.any(sd <= 0):
            raise InvalidStatsError("standard deviations must be > 0")
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)

    @classmethod
    def identity(cls, channels):
        return cls(np.zeros(channels), np.ones(channels))

    @classmethod
    def from_data(cls, values, skip_channels=()):
        """Per-channel mean/std; skipped or constant channels get (0, 1)."""
        arr = as_float_array(values, "values", ndim=2)
        mu = arr.mean(axis=0) if len(arr) else np.zeros(arr.shape[1])
        sd = arr.std(axis=0) if len(arr) else np.ones(arr.shape[1])
        sd = np.where(sd > 0, sd, 1.0)
        for c in skip_channels:
            mu[c], sd[c] = 0.0, 1.0
        return cls(mu, sd)


def _apply_stats(values, stats, skip_channels, forward):
    arr = as_float_array(values, "values")
    if arr.shape[-1] != len(stats.means):
        raise ShapeError(f"stats cover {len(stats.means)} channels, values have {arr.shape[-1]}")
    keep = np.ones(arr.shape[-1], dtype=bool)
    keep[list(skip_channels)] = False
    mu = np.where(keep, stats.means, 0.0)
    sd = np.where(keep, stats.stds, 1.0)
    return (arr - mu) / sd if forward else arr * sd + mu


def normalize(values, stats, skip_channels=()):
    """``(v - mean) / std`` per channel, leaving ``skip_channels`` untouched.

    Works on any array whose last axis is the channel axis (point lists or images).
    """
    return _apply_stats(values, stats, skip_channels, forward=True)


def denormalize(values, stats, skip_channels=()):
    return _apply_stats(values, stats, skip_channels, forward=False)


def skip_indices(layout, skip_names=GEOMETRIC_CHANNELS):
    return tuple(i for i, name in enumerate(layout) if name in skip_names)


def crop_to_range(cloud, spec):
    """Keep points strictly inside the open point-cloud-range box."""
    p = cloud.positions
    inside = np.all((p > spec.lower) & (p < spec.upper), axis=1)
    return cloud.subset(inside)


def fov_filter(cloud, boxes, calib):
    """Drop points and boxes (by centre) that do not project into the image."""
    keep_pts = project_points(cloud.positions, calib).valid
    if boxes:
        centers = np.array([b.center for b in boxes], dtype=np.float64)
        keep_box = project_points(centers, calib).valid
        kept_boxes = [b for b, k in zip(boxes, keep_box) if k]
    else:
        kept_boxes = []
    return cloud.subset(keep_pts), kept_boxes


@dataclass(frozen=True)
class PillarIndex:
    """Non-empty pillars in lexicographic ``(ix, iy)`` order.

    Members of pillar ``m`` are ``point_order[offsets[m]:offsets[m + 1]]`` (CSR layout).
    """

    pillar_coords: np.ndarray
    point_order: np.ndarray
    offsets: np.ndarray
    grid_shape: tuple

    def __len__(self):
        return len(self.pillar_coords)

    def members(self, m):
        return self.point_order[self.offsets[m]:self.offsets[m + 1]]

    def counts(self):
        return np.diff(self.offsets)


def pillar_grid(spec, pillar_x, pillar_y):
    """GridSpec with the pillar footprint and a single vertical cell."""
    return spec.with_cells(pillar_x, pillar_y, spec.z_max - spec.z_min)


def pillarize(cloud, spec):
    """Bucket points into BEV columns of size ``spec.cell_x x spec.cell_y``."""
    nx, ny = spec.X, spec.Y
    p = cloud.positions
    ix = np.clip(np.floor((p[:, 0] - spec.x_min) / spec.cell_x).astype(np.int64), 0, nx - 1)
    iy = np.clip(np.floor((p[:, 1] - spec.y_min) / spec.cell_y).astype(np.int64), 0, ny - 1)
    flat = ix * ny + iy
    order = np.argsort(flat, kind="stable")
    uniq, starts = np.unique(flat[order], return_index=True)
    offsets = np.append(starts, len(order)).astype(np.int64)
    coords = np.stack([uniq // ny, uniq % ny], axis=1).astype(np.int64)
    return PillarIndex(coords, order.astype(np.int64), offsets, (nx, ny))


def pillar_mean_features(values, index):
    """Scatter per-pillar mean of ``values`` (N x C) into an ``X x Y x C`` grid."""
    nx, ny = index.grid_shape
    c = values.shape[1]
    grid = np.zeros((nx * ny, c))
    if len(index):
        flat = index.pillar_coords[:, 0] * ny + index.pillar_coords[:, 1]
        sums = np.add.reduceat(values[index.point_order], index.offsets[:-1], axis=0)
        grid[flat] = sums / index.counts()[:, None]
    return grid.reshape(nx, ny, c)


def wrap_angle(angle):
    """Wrap to the half-open interval ``(-pi, pi]``."""
    a = np.asarray(angle, dtype=np.float64)
    out = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    return float(out) if out.ndim == 0 else out


def horizontal_flip(cloud, boxes, image):
    """Mirror the scene about the radar x-z plane and the image about its width.

    Radar and box ``y`` change sign and box yaw negates (wrapped to ``(-pi, pi]``).
    """
    pos = cloud.positions.copy()
    pos[:, 1] = -pos[:, 1]
    flipped_cloud = RadarPointCloud(pos, cloud.features, cloud.timestamps, cloud.feature_names)
    flipped_boxes = [
        replace(b, center=(b.center[0], -b.center[1], b.center[2]), yaw=wrap_angle(-b.yaw))
        for b in boxes
    ]
    flipped_image = None if image is None else np.ascontiguousarray(np.asarray(image)[:, ::-1])
    return flipped_cloud, flipped_boxes, flipped_image


def flip_bev(features):
    """Mirror a BEV tensor ``X x Y x ...`` along the lateral axis (symmetric y range)."""
    return np.ascontiguousarray(np.asarray(features)[:, ::-1])


# -- file IO ---------------------------------------------------------------

def read_points_bin(path, channels):
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % channels:
        raise DataError(f"{path}: {raw.size} floats is not a multiple of {channels} channels")
    return raw.reshape(-1, channels).astype(np.float64)


def write_points_bin(path, array):
    np.ascontiguousarray(np.asarray(array, dtype="<f4")).tofile(path)


def read_points_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty CSV (header row required)")
    header = tuple(h.strip() for h in rows[0])
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return data.reshape(-1, len(header)), header


def load_point_cloud(path, layout=DEFAULT_LAYOUT):
    """Load a ``.bin`` (float32 LE, layout from config) or a headed ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        data, header = read_points_csv(path)
        return RadarPointCloud.from_array(data, header)
    try:
        data = read_points_bin(path, len(layout))
    except OSError as exc:
        raise DataError(f"cannot read point cloud {path}: {exc}") from None
    return RadarPointCloud.from_array(data, layout)
