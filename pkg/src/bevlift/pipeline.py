"""Frame-level wiring from raw radar + image features to image BEV and detections."""

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorio
from ._validation import check_finite
from .exceptions import BevliftError, ConfigError, DataError, PipelineError
from .geometry import load_calibration, voxel_centers
from .head import DetectionSet, decode_detections, distance_nms
from .lifting import (crn_frustum_occupancy, depth_weight, height_compress, level_shape,
                      occupancy_weight, project_voxels, sample_lift, splat_lift,
                      trilinear_sample_depth)
from .nets import HeadWeights, depth_net, fuse_bev, occupancy_net, seeded_weights, sigmoid
from .pointcloud import (NormalizationStats, RadarPointCloud, crop_to_range, fov_filter,
                         load_point_cloud, normalize, pillar_mean_features, pillarize)


@dataclass
class Frame:
    frame_id: str
    cloud: RadarPointCloud
    image: np.ndarray
    calib: object
    boxes: list = field(default_factory=list)
    tags: tuple = ()


@dataclass
class LiftResult:
    f_depth: np.ndarray
    f_occ: np.ndarray
    mask: np.ndarray


@dataclass
class PipelineOutput:
    frame_id: str
    image_bev: np.ndarray
    mask: np.ndarray
    detections: DetectionSet
    heatmap: np.ndarray = field(repr=False, default=None)


@contextmanager
def stage(name):
    """Attach the stage name to any failure raised inside the block."""
    try:
        yield
    except PipelineError:
        raise
    except (BevliftError, ValueError, OSError, KeyError) as exc:
        raise PipelineError(name, exc) from exc


def _finite(x, name):
    try:
        return check_finite(x, name)
    except BevliftError as exc:
        raise PipelineError(name, exc) from exc


# -- feature providers ---------------------------------------------------------

def avg_pool(image, stride):
    """Average pool ``H x W x C`` by ``stride``; edge windows average their valid pixels."""
    img = np.asarray(image, dtype=np.float64)
    if stride == 1:
        return img.copy()
    h, w = img.shape[:2]
    rows = np.add.reduceat(img, np.arange(0, h, stride), axis=0)
    both = np.add.reduceat(rows, np.arange(0, w, stride), axis=1)
    nr = np.minimum(stride, h - np.arange(0, h, stride))
    nc = np.minimum(stride, w - np.arange(0, w, stride))
    return both / (nr[:, None] * nc[None, :])[..., None]


def image_pyramid(image, strides):
    """Pooled copies of the image, one per level, each of :func:`level_shape` size."""
    return [avg_pool(image, s) for s in strides]


def radar_bev_features(values, cloud, cfg):
    """Mean pillar features on the pillar grid, then mean-pooled by the radar stride."""
    index = pillarize(cloud, cfg.pillar_spec)
    grid = pillar_mean_features(values, index)
    s = cfg.radar_stride
    nx, ny, c = grid.shape
    return grid.reshape(nx // s, s, ny // s, s, c).mean(axis=(1, 3))


def default_weights(cfg):
    return seeded_weights(len(cfg.radar_layout), cfg.image_channels, cfg.n_levels, cfg.bev_spec.Z,
                          cfg.bins.D, cfg.n_classes, cfg.fused_channels, seed=cfg.weights_seed,
                          heatmap_prior=cfg.heatmap_prior)


def load_weights(path, cfg):
    try:
        tensors = tensorio.load_archive(path)
    except OSError as exc:
        raise DataError(f"cannot read weights {path}: {exc}") from None
    return HeadWeights.from_tensors({k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()},
                                    cfg.n_levels)


def resolve_weights(cfg, weights=None):
    if weights is not None:
        return weights
    if cfg.weights_path:
        return load_weights(cfg.weights_path, cfg)
    return default_weights(cfg)


def _check_weights(cfg, w):
    c_r, c_i, z, d = len(cfg.radar_layout), cfg.image_channels, cfg.bev_spec.Z, cfg.bins.D
    if (w.occupancy.c_in, w.occupancy.c_out) != (c_r, z):
        raise ConfigError(f"occupancy weights must map {c_r} -> {z} channels")
    if len(w.depth) != cfg.n_levels or any((x.c_in, x.c_out) != (c_i, d) for x in w.depth):
        raise ConfigError(f"need {cfg.n_levels} depth heads mapping {c_i} -> {d} channels")
    if (w.compress.c_in, w.compress.c_out) != (z * 2 * c_i, c_i):
        raise ConfigError(f"compress weights must map {z * 2 * c_i} -> {c_i} channels")
    if w.fuse.c_in != c_r + c_i:
        raise ConfigError(f"fuse weights must take {c_r + c_i} channels")
    if w.heatmap.c_in != w.fuse.c_out or w.heatmap.c_out != cfg.n_classes:
        raise ConfigError("heatmap weights do not match the fused channels / class count")
    if w.regression.c_in != w.fuse.c_out or w.regression.c_out != 8:
        raise ConfigError("regression weights must map fused channels -> 8")


# -- lifting strategies --------------------------------------------------------

def lift_image(strategy, cfg, pyramid, depth_maps, occupancy, cloud, calib, centers):
    """Produce the ``(F', F'')`` pair fed to height compression for one strategy."""
    strides = cfg.strides
    if strategy == "splatting":
        grid, hit = splat_lift(pyramid, depth_maps, strides, calib, cfg.bev_spec, cfg.bins)
        return LiftResult(grid[None], grid[None], hit)
    feats = sample_lift(pyramid, strides, centers, calib)
    mask = project_voxels(centers, calib)[3]
    if strategy == "sampling":
        return LiftResult(feats, feats, mask)
    ds = trilinear_sample_depth(depth_maps, strides, centers, calib, cfg.bins)
    f_depth = depth_weight(feats, ds)
    if strategy == "depth-sampling":
        return LiftResult(f_depth, feats, mask)
    if strategy == "occ-depth-sampling":
        return LiftResult(f_depth, occupancy_weight(feats, occupancy), mask)
    if strategy == "crn-occ-sampling":
        shape = level_shape(calib.image_size, strides[0])
        occ = crn_frustum_occupancy(cloud, calib, shape, strides[0], centers, cfg.bins)
        return LiftResult(f_depth, occupancy_weight(feats, occ), mask)
    raise ConfigError(f"unknown lifting strategy {strategy!r}")


# -- the pipeline --------------------------------------------------------------

def _radar_values(cloud, cfg):
    arr = cloud.to_array()
    names = cloud.channel_names
    try:
        cols = [names.index(c) for c in cfg.radar_layout]
    except ValueError:
        raise DataError(f"point cloud channels {names} do not cover layout {cfg.radar_layout}") from None
    return arr[:, cols]


def _stats(pair, channels, what):
    if pair is None:
        return NormalizationStats.identity(channels)
    stats = pair if isinstance(pair, NormalizationStats) else NormalizationStats(*pair)
    if len(stats.means) != channels:
        raise ConfigError(f"{what} normalization covers {len(stats.means)} channels, data has {channels}")
    return stats


def run_pipeline(cfg, frame, weights=None, radar_stats=None, image_stats=None, strategy=None):
    """Run one frame end to end.

    Stages: normalize, crop, fov_filter, pillarize, radar features, occupancy, depth,
    lifting, height compression, fusion, head, decode, NMS. Failures carry the stage name.
    """
    strategy = strategy or cfg.strategy
    with stage("weights"):
        weights = resolve_weights(cfg, weights)
        _check_weights(cfg, weights)
    calib = frame.calib
    with stage("normalize"):
        skip = [i for i, c in enumerate(cfg.radar_layout) if c in cfg.radar_skip]
        values = _radar_values(frame.cloud, cfg)
        r_stats = _stats(radar_stats if radar_stats is not None else cfg.radar_norm, values.shape[1], "radar")
        values = normalize(values, r_stats, skip)
        image = np.asarray(frame.image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != cfg.image_channels:
            raise DataError(f"image must be H x W x {cfg.image_channels}, got {image.shape}")
        if image.shape[:2] != (calib.image_size[1], calib.image_size[0]):
            raise DataError(f"image is {image.shape[1]}x{image.shape[0]} but calibration says "
                            f"{calib.image_size[0]}x{calib.image_size[1]}")
        i_stats = _stats(image_stats if image_stats is not None else cfg.image_norm, image.shape[2], "image")
        image = normalize(image, i_stats)
    _finite(values, "normalize")
    _finite(image, "normalize")
    with stage("crop"):
        cloud = RadarPointCloud(frame.cloud.positions, values, None, tuple(cfg.radar_layout))
        cloud = crop_to_range(cloud, cfg.pcr)
    with stage("fov_filter"):
        cloud, _ = fov_filter(cloud, [], calib)
    with stage("radar_features"):
        radar_bev = radar_bev_features(cloud.features, cloud, cfg)
    _finite(radar_bev, "radar_features")
    with stage("occupancy"):
        occupancy = occupancy_net(radar_bev, weights.occupancy)
    _finite(occupancy, "occupancy")
    with stage("depth"):
        pyramid = image_pyramid(image, cfg.strides)
        depth_maps = depth_net(pyramid, list(weights.depth))
    for d in depth_maps:
        _finite(d, "depth")
    with stage("lifting"):
        centers = voxel_centers(cfg.bev_spec)
        lifted = lift_image(strategy, cfg, pyramid, depth_maps, occupancy, cloud, calib, centers)
    _finite(lifted.f_depth, "lifting")
    _finite(lifted.f_occ, "lifting")
    with stage("height_compress"):
        image_bev = height_compress(lifted.f_depth, lifted.f_occ, weights.compress)
    _finite(image_bev, "height_compress")
    with stage("fuse"):
        fused = fuse_bev(radar_bev, image_bev, weights.fuse)
    _finite(fused, "fuse")
    with stage("head"):
        heatmap = np.moveaxis(sigmoid(weights.heatmap(fused)), -1, 0)
        regression = weights.regression(fused)
    _finite(heatmap, "head")
    _finite(regression, "head")
    with stage("decode"):
        dets = decode_detections(heatmap, regression, cfg.bev_spec, cfg.top_k, cfg.score_threshold,
                                 frame.frame_id)
    with stage("nms"):
        dets = distance_nms(dets, cfg.nms_thresholds)
    return PipelineOutput(frame.frame_id, image_bev, lifted.mask, dets, heatmap)


def run_frames(cfg, frames, weights=None, radar_stats=None, image_stats=None, strategy=None, jobs=1):
    """Run many frames; results come back in input order whatever ``jobs`` is."""
    weights = resolve_weights(cfg, weights)

    def one(frame):
        return run_pipeline(cfg, frame, weights, radar_stats, image_stats, strategy)

    if jobs <= 1:
        return [one(f) for f in frames]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, frames))


# -- frame directories ---------------------------------------------------------

def load_frame(path, cfg, calib=None):
    """Read ``radar.bin`` (or ``radar.csv``), ``image.lxt`` and ``calib.txt`` from a frame dir."""
    path = Path(path)
    radar = path / "radar.bin"
    if not radar.exists():
        radar = path / "radar.csv"
    if not radar.exists():
        raise DataError(f"{path}: no radar.bin or radar.csv")
    cloud = load_point_cloud(radar, cfg.radar_layout)
    try:
        image = tensorio.load(path / "image.lxt")
    except OSError as exc:
        raise DataError(f"{path}: cannot read image.lxt: {exc}") from None
    if (path / "calib.txt").exists():
        calib = load_calibration(path / "calib.txt")
    elif calib is None:
        raise DataError(f"{path}: no calib.txt and no shared calibration")
    return Frame(path.name, cloud, np.asarray(image, dtype=np.float64), calib)


def frame_dirs(root):
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and ((p / "radar.bin").exists() or (p / "radar.csv").exists()))
    if not dirs:
        raise DataError(f"{root}: no frame directories found")
    return dirs


def load_frames(root, cfg):
    root = Path(root)
    shared = load_calibration(root / "calib.txt") if (root / "calib.txt").exists() else None
    return [load_frame(p, cfg, shared) for p in frame_dirs(root)]
