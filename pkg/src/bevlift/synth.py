"""Deterministic synthetic scenes with exact ground truth.

Randomness comes from :class:`XorShift64Star`, seeded through SplitMix64 so that
each entity (placement, object ``i``, clutter) owns an independent stream derived
from ``(seed, stream path)``. The algorithms are fixed and documented so that
scenes can be reproduced bit-for-bit from the seed in any language:

* ``splitmix64(x)``: ``x += 0x9E3779B97F4A7C15``; ``z = x``;
  ``z = (z ^ z >> 30) * 0xBF58476D1CE4E5B9``; ``z = (z ^ z >> 27) * 0x94D049BB133111EB``;
  return ``z ^ z >> 31`` (all mod 2**64).
* stream state: ``h = splitmix64(seed)``, then ``h = splitmix64(h ^ splitmix64(p))``
  for each ``p`` in the path; a zero state is replaced by ``0x9E3779B97F4A7C15``.
* ``next``: ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27``; output ``x * 0x2545F4914F6CDD1D``.
* uniform in ``[0, 1)``: ``(next >> 11) * 2**-53``.
* standard normal: Box-Muller ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` (one draw per pair).
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorio
from .evaluation import bev_intersection
from .exceptions import DataError
from .geometry import project_points, save_calibration, voxel_centers
from .head import Box3D, write_boxes_csv
from .lifting import one_hot_depth
from .pointcloud import DEFAULT_LAYOUT, RadarPointCloud, write_points_bin

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

CLASS_SIZES = {
    "car": (3.9, 1.6, 1.56),
    "pedestrian": (0.8, 0.6, 1.73),
    "cyclist": (1.76, 0.6, 1.73),
    "truck": (8.0, 2.6, 3.2),
}


def splitmix64(x):
    x = (x + GOLDEN) & MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_state(seed, *path):
    h = splitmix64(int(seed) & MASK64)
    for p in path:
        h = splitmix64(h ^ splitmix64(int(p) & MASK64))
    return h or GOLDEN


class XorShift64Star:
    """xorshift64* generator on one derived stream."""

    def __init__(self, seed, *path):
        self.state = derive_state(seed, *path)

    def next_u64(self):
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def random(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo, hi):
        return lo + (hi - lo) * self.random()

    def normal(self, mean=0.0, sigma=1.0):
        u1, u2 = self.random(), self.random()
        return mean + sigma * math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    counts: dict
    calib: object
    spec: object
    class_names: tuple = ("car", "pedestrian", "cyclist")
    noise_sigma: float = 0.05
    clutter_rate: float = 0.01
    surface_density: float = 2.0
    ground_z: float = -1.2
    max_tries: int = 2000

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")
        if any(int(c) < 0 for c in self.counts.values()):
            raise DataError("object counts must be >= 0")
        if self.clutter_rate < 0 or self.surface_density < 0:
            raise DataError("densities must be >= 0")


@dataclass
class Scene:
    boxes: list
    cloud: RadarPointCloud
    depth_map: np.ndarray
    image: np.ndarray
    object_ids: np.ndarray
    is_clutter: np.ndarray = field(repr=False, default=None)

    def __iter__(self):
        return iter((self.boxes, self.cloud, self.depth_map))


def _place_boxes(sspec):
    rng = XorShift64Star(sspec.seed, 0)
    grid, calib = sspec.spec, sspec.calib
    boxes = []
    for cid, name in enumerate(sspec.class_names):
        base = CLASS_SIZES.get(name.lower(), (1.0, 1.0, 1.0))
        for _ in range(int(sspec.counts.get(name, 0))):
            for _ in range(sspec.max_tries):
                size = tuple(s * rng.uniform(0.9, 1.1) for s in base)
                margin = 0.5 * math.hypot(size[0], size[1]) + 0.1
                x = rng.uniform(grid.x_min + margin, grid.x_max - margin)
                y = rng.uniform(grid.y_min + margin, grid.y_max - margin)
                yaw = rng.uniform(-math.pi, math.pi)
                z = sspec.ground_z + size[2] / 2
                cand = Box3D((x, y, z), size, yaw, cid)
                if not project_points(np.array([cand.center]), calib).valid[0]:
                    continue
                grown = Box3D(cand.center, (size[0] + 0.4, size[1] + 0.4, size[2]), yaw, cid)
                if any(bev_intersection(grown, b) > 0 for b in boxes):
                    continue
                boxes.append(cand)
                break
            else:
                raise DataError(f"could not place a {name} without overlap after {sspec.max_tries} tries")
    return boxes


def _box_faces(box):
    """Yield ``(centre, normal, tangent_a, half_a, tangent_b, half_b)`` per face (world frame)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    ex = np.array([c, s, 0.0])
    ey = np.array([-s, c, 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    half = np.array(box.size) / 2
    center = np.array(box.center)
    axes = (ex, ey, ez)
    for k in range(3):
        a, b = [i for i in range(3) if i != k]
        for sign in (1.0, -1.0):
            n = sign * axes[k]
            yield center + n * half[k], n, axes[a], half[a], axes[b], half[b]


def _truncated_noise(rng, sigma):
    if sigma == 0:
        return np.zeros(3)
    while True:
        v = np.array([rng.normal(0.0, sigma) for _ in range(3)])
        if np.linalg.norm(v) <= 4.0 * sigma:
            return v


def _object_points(box, index, sspec):
    rng = XorShift64Star(sspec.seed, 1, index)
    pts, rcs = [], []
    for fc, n, ta, ha, tb, hb in _box_faces(box):
        if np.dot(n, fc) >= 0:  # faces away from the sensor at the origin
            continue
        expected = sspec.surface_density * 4 * ha * hb
        count = int(expected) + (1 if rng.random() < expected - int(expected) else 0)
        for _ in range(count):
            p = fc + ta * rng.uniform(-ha, ha) + tb * rng.uniform(-hb, hb)
            pts.append(p + _truncated_noise(rng, sspec.noise_sigma))
            rcs.append(rng.normal(10.0, 3.0))
    return pts, rcs


def _clutter_points(sspec):
    rng = XorShift64Star(sspec.seed, 2)
    g = sspec.spec
    area = (g.x_max - g.x_min) * (g.y_max - g.y_min)
    expected = sspec.clutter_rate * area
    count = int(expected) + (1 if rng.random() < expected - int(expected) else 0)
    pts, rcs = [], []
    for _ in range(count):
        pts.append((rng.uniform(g.x_min, g.x_max), rng.uniform(g.y_min, g.y_max), rng.uniform(g.z_min, g.z_max)))
        rcs.append(rng.normal(-10.0, 3.0))
    return pts, rcs


def _ray_box_depth(box, origin, dirs):
    """Image depth of the first hit of rays ``origin + d * dirs`` (inf on miss)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    o = rot @ (origin - np.array(box.center))
    dl = dirs @ rot.T
    half = np.array(box.size) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / dl
        t2 = (half - o) / dl
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tmax >= tmin) & (tmin > 1e-6)
    return np.where(hit, tmin, np.inf)


def render_depth(boxes, calib):
    """Pinhole render of box surfaces: ``H x W`` depths (0 = sky) and object ids (-1 = sky)."""
    w, h = calib.image_size
    m = calib.intrinsics.matrix
    k_inv = np.linalg.inv(m[:, :3])
    inv = calib.radar_to_camera.inverse()
    origin = inv.apply((-k_inv @ m[:, 3])[None])[0]
    depth = np.full((h, w), np.inf)
    ids = np.full((h, w), -1, dtype=np.int64)
    for i, box in enumerate(boxes):
        corners = _box_corners(box)
        proj = project_points(corners, calib)
        if np.all(proj.d > 1e-6):
            u0 = max(0, int(math.floor(np.min(proj.u))) - 1)
            u1 = min(w, int(math.ceil(np.max(proj.u))) + 2)
            v0 = max(0, int(math.floor(np.min(proj.v))) - 1)
            v1 = min(h, int(math.ceil(np.max(proj.v))) + 2)
        else:
            u0, u1, v0, v1 = 0, w, 0, h
        if u0 >= u1 or v0 >= v1:
            continue
        vv, uu = np.meshgrid(np.arange(v0, v1), np.arange(u0, u1), indexing="ij")
        # rays through pixel centres
        pix = np.stack([uu + 0.5, vv + 0.5, np.ones_like(uu)], -1).reshape(-1, 3).astype(np.float64)
        dirs = (pix @ k_inv.T) @ inv.rotation.T
        d = _ray_box_depth(box, origin, dirs).reshape(vv.shape)
        win = depth[v0:v1, u0:u1]
        closer = d < win
        win[closer] = d[closer]
        ids[v0:v1, u0:u1][closer] = i
    depth[~np.isfinite(depth)] = 0.0
    return depth, ids


def _box_corners(box):
    l, w, h = box.size
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local = np.array([[sx * l / 2, sy * w / 2, sz * h / 2] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.array(box.center)


def pseudo_image(depth_map, object_ids, boxes, n_classes):
    """Three-channel stand-in image: inverse depth, class code, row ramp."""
    h, w = depth_map.shape
    inv_depth = np.where(depth_map > 0, 1.0 / np.where(depth_map > 0, depth_map, 1.0), 0.0)
    cls = np.array([b.class_id for b in boxes] + [-1], dtype=np.float64)
    code = (cls[object_ids] + 1.0) / max(n_classes, 1)
    ramp = np.broadcast_to((np.arange(h) / max(h - 1, 1))[:, None], (h, w))
    return np.stack([inv_depth, code, ramp], axis=-1)


def generate_scene(sspec):
    """Boxes, surface-sampled radar returns with clutter, and an exact depth render."""
    boxes = _place_boxes(sspec)
    pts, rcs, clutter = [], [], []
    for i, box in enumerate(boxes):
        p, r = _object_points(box, i, sspec)
        pts += p
        rcs += r
        clutter += [False] * len(p)
    p, r = _clutter_points(sspec)
    pts += p
    rcs += r
    clutter += [True] * len(p)
    n = len(pts)
    positions = np.array(pts, dtype=np.float64).reshape(n, 3)
    feats = np.zeros((n, 3))
    feats[:, 0] = rcs
    cloud = RadarPointCloud(positions, feats, np.zeros(n), ("rcs", "v_r", "v_r_comp"))
    depth, ids = render_depth(boxes, sspec.calib)
    image = pseudo_image(depth, ids, boxes, len(sspec.class_names))
    return Scene(boxes, cloud, depth, image, ids, np.array(clutter, dtype=bool))


def ideal_depth_distribution(depth_map, bins):
    """One-hot ``H x W x D`` distribution of the rendered depth, plus the labelled mask."""
    return one_hot_depth(depth_map, bins)


def ideal_occupancy(boxes, spec):
    """``X x Y x Z`` grid: 1 where the voxel centre lies inside some box."""
    centers = voxel_centers(spec)
    occ = np.zeros(spec.shape)
    for box in boxes:
        occ[box.contains(centers)] = 1.0
    return occ


def point_surface_distance(points, box):
    """Euclidean distance from points to the surface of an oriented box."""
    p = np.asarray(points, dtype=np.float64) - np.array(box.center)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local = np.stack([c * p[:, 0] + s * p[:, 1], -s * p[:, 0] + c * p[:, 1], p[:, 2]], axis=1)
    half = np.array(box.size) / 2
    q = np.abs(local) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = -np.minimum(np.max(q, axis=1), 0.0)
    return np.where(np.any(q > 0, axis=1), outside, inside)


def write_scene(out_dir, scene, calib, layout=DEFAULT_LAYOUT):
    """Dump one frame in the formats the CLI consumes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr = scene.cloud.to_array()
    names = scene.cloud.channel_names
    col = {n: i for i, n in enumerate(names)}
    write_points_bin(out_dir / "radar.bin", arr[:, [col[n] for n in layout]] if len(arr) else np.zeros((0, len(layout))))
    tensorio.save(out_dir / "image.lxt", scene.image)
    tensorio.save(out_dir / "depth.lxt", scene.depth_map)
    save_calibration(out_dir / "calib.txt", calib)


def write_ground_truth(path, boxes, class_names):
    write_boxes_csv(path, boxes, class_names, with_score=False)
