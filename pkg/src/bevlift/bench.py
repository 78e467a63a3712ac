"""Wall-clock throughput of the hot lifting kernels on a VoD-scale camera."""

import csv
import time

import numpy as np

from .exceptions import ConfigError
from .geometry import GridSpec, voxel_centers
from .lifting import level_shape, sample_lift, splat_lift, trilinear_sample_depth
from .nets import softmax

KERNELS = ("sample", "trilinear", "splat")
BENCH_COLUMNS = ("kernel", "grid", "voxels", "levels", "repeats", "best_seconds", "mean_seconds",
                 "voxels_per_second")


def parse_size(text):
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"grid size must look like 160x160x10, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise ConfigError(f"grid size must look like 160x160x10, got {text!r}")
    return dims


def resized_grid(pcr, dims):
    """Same range as ``pcr`` split into ``dims`` cells."""
    nx, ny, nz = dims
    return GridSpec(pcr.x_min, pcr.x_max, pcr.y_min, pcr.y_max, pcr.z_min, pcr.z_max,
                    (pcr.x_max - pcr.x_min) / nx, (pcr.y_max - pcr.y_min) / ny, (pcr.z_max - pcr.z_min) / nz)


def _inputs(cfg, seed=0):
    rng = np.random.default_rng(seed)
    calib = cfg.camera
    feats, depths = [], []
    for s in cfg.strides:
        h, w = level_shape(calib.image_size, s)
        feats.append(rng.standard_normal((h, w, cfg.image_channels)))
        depths.append(softmax(rng.standard_normal((h, w, cfg.bins.D))))
    return calib, feats, depths


def run_bench(cfg, kernels=KERNELS, sizes=((160, 160, 10),), repeats=3):
    if cfg.camera is None:
        raise ConfigError("benchmarks need camera.* keys in the config")
    for k in kernels:
        if k not in KERNELS:
            raise ConfigError(f"unknown kernel {k!r}; choose from {', '.join(KERNELS)}")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    calib, feats, depths = _inputs(cfg)
    rows = []
    for dims in sizes:
        spec = resized_grid(cfg.pcr, dims)
        centers = voxel_centers(spec)
        calls = {
            "sample": lambda: sample_lift(feats, cfg.strides, centers, calib),
            "trilinear": lambda: trilinear_sample_depth(depths, cfg.strides, centers, calib, cfg.bins),
            "splat": lambda: splat_lift(feats, depths, cfg.strides, calib, spec, cfg.bins),
        }
        nvox = int(np.prod(dims))
        for k in kernels:
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                calls[k]()
                times.append(time.perf_counter() - t0)
            best = min(times)
            rows.append({
                "kernel": k, "grid": "x".join(map(str, dims)), "voxels": nvox, "levels": len(cfg.strides),
                "repeats": repeats, "best_seconds": f"{best:.6f}", "mean_seconds": f"{np.mean(times):.6f}",
                "voxels_per_second": f"{nvox / best:.1f}",
            })
    return rows


def write_bench_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
