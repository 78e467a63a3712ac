"""Center-based heatmap targets, top-K decoding and per-class distance NMS."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError, NumericalError
from .pointcloud import wrap_angle

REG_CHANNELS = ("dx", "dy", "z", "log_l", "log_w", "log_h", "sin_yaw", "cos_yaw")


@dataclass(frozen=True)
class Box3D:
    """Oriented box in the radar frame; ``center`` is the geometric centre."""

    center: tuple
    size: tuple
    yaw: float
    class_id: int
    score: float = None
    frame: str = ""
    tags: tuple = field(default=(), compare=False)

    def __post_init__(self):
        c = tuple(float(x) for x in self.center)
        s = tuple(float(x) for x in self.size)
        if len(c) != 3 or len(s) != 3:
            raise DataError("box centre and size must have three components")
        if not all(x > 0 for x in s):
            raise DataError(f"box dimensions must be positive, got {s}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "class_id", int(self.class_id))
        if self.score is not None:
            object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "tags", tuple(self.tags))

    def bev_corners(self):
        """Four ``(x, y)`` corners, counter-clockwise."""
        l, w, _ = self.size
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = ((l / 2, w / 2), (-l / 2, w / 2), (-l / 2, -w / 2), (l / 2, -w / 2))
        cx, cy, _ = self.center
        return [(cx + c * a - s * b, cy + s * a + c * b) for a, b in local]

    def contains(self, points):
        """Boolean mask of ``(..., 3)`` points inside the (yaw-rotated) box."""
        p = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        lx = c * p[..., 0] + s * p[..., 1]
        ly = -s * p[..., 0] + c * p[..., 1]
        l, w, h = self.size
        return (np.abs(lx) <= l / 2) & (np.abs(ly) <= w / 2) & (np.abs(p[..., 2]) <= h / 2)


class DetectionSet(list):
    """A list of scored :class:`Box3D`."""

    @property
    def scores(self):
        return np.array([b.score for b in self], dtype=np.float64)


def gaussian_radius(height, width, min_overlap=0.7):
    """CenterNet radius such that a shifted box keeps IoU >= ``min_overlap``."""
    a1 = 1.0
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2

    a2 = 4.0
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def box_cell(box, spec):
    fx = (box.center[0] - spec.x_min) / spec.cell_x
    fy = (box.center[1] - spec.y_min) / spec.cell_y
    ix, iy = int(math.floor(fx)), int(math.floor(fy))
    return ix, iy, fx - ix, fy - iy


def effective_radius(box, spec, min_radius=2):
    r = gaussian_radius(box.size[0] / spec.cell_x, box.size[1] / spec.cell_y)
    return max(int(min_radius), int(r))


def _draw_gaussian(plane, ix, iy, radius):
    sigma = (2 * radius + 1) / 6.0
    nx, ny = plane.shape
    x0, x1 = max(0, ix - radius), min(nx, ix + radius + 1)
    y0, y1 = max(0, iy - radius), min(ny, iy + radius + 1)
    if x0 >= x1 or y0 >= y1:
        return
    dx = np.arange(x0, x1) - ix
    dy = np.arange(y0, y1) - iy
    g = np.exp(-(dx[:, None] ** 2 + dy[None, :] ** 2) / (2 * sigma * sigma))
    np.maximum(plane[x0:x1, y0:y1], g, out=plane[x0:x1, y0:y1])


def heatmap_targets(boxes, spec, n_classes, min_radius=2):
    """``K x X x Y`` class heatmaps with a unit peak at each box's centre cell."""
    hm = np.zeros((n_classes, spec.X, spec.Y))
    for box in boxes:
        ix, iy, _, _ = box_cell(box, spec)
        if not (0 <= ix < spec.X and 0 <= iy < spec.Y):
            continue
        _draw_gaussian(hm[box.class_id], ix, iy, effective_radius(box, spec, min_radius))
    return hm


def regression_targets(boxes, spec):
    """``X x Y x 8`` regression map and the ``X x Y`` mask of written cells."""
    reg = np.zeros((spec.X, spec.Y, len(REG_CHANNELS)))
    mask = np.zeros((spec.X, spec.Y), dtype=bool)
    for box in boxes:
        ix, iy, ox, oy = box_cell(box, spec)
        if not (0 <= ix < spec.X and 0 <= iy < spec.Y):
            continue
        l, w, h = box.size
        reg[ix, iy] = (ox, oy, box.center[2], math.log(l), math.log(w), math.log(h),
                       math.sin(box.yaw), math.cos(box.yaw))
        mask[ix, iy] = True
    return reg, mask


def encode_targets(boxes, spec, n_classes, min_radius=2):
    hm = heatmap_targets(boxes, spec, n_classes, min_radius)
    reg, _ = regression_targets(boxes, spec)
    return hm, reg


def decode_detections(heatmap, regression, spec, k=1000, score_threshold=0.0, frame=""):
    """Top-``k`` cells over all classes, turned into boxes.

    Cells scoring ``<= score_threshold`` are dropped. Ties break by ascending
    ``(class_id, y, x)``.
    """
    if k <= 0:
        raise ConfigError("top-k count must be positive")
    hm = np.asarray(heatmap, dtype=np.float64)
    reg = np.asarray(regression, dtype=np.float64)
    n_cls, nx, ny = hm.shape
    if reg.shape != (nx, ny, len(REG_CHANNELS)):
        raise DataError(f"regression map must be {(nx, ny, len(REG_CHANNELS))}, got {reg.shape}")
    cls, ix, iy = np.meshgrid(np.arange(n_cls), np.arange(nx), np.arange(ny), indexing="ij")
    scores = hm.reshape(-1)
    order = np.lexsort((ix.reshape(-1), iy.reshape(-1), cls.reshape(-1), -scores))
    order = order[scores[order] > score_threshold][:k]
    dets = DetectionSet()
    for flat in order:
        c, x, y = np.unravel_index(flat, hm.shape)
        dx, dy, z, ll, lw, lh, sn, cs = reg[x, y]
        if max(ll, lw, lh) > 700.0:
            raise NumericalError(f"log-size regression {max(ll, lw, lh):.3g} overflows at cell ({x}, {y})")
        center = (spec.x_min + (x + dx) * spec.cell_x, spec.y_min + (y + dy) * spec.cell_y, z)
        dets.append(Box3D(center, (math.exp(ll), math.exp(lw), math.exp(lh)),
                          wrap_angle(math.atan2(sn, cs)), int(c), float(scores[flat]), frame))
    return dets


def distance_nms(dets, thresholds):
    """Greedy per-class suppression by BEV centre distance.

    A detection is dropped iff a higher-ranked kept detection of the same class lies
    strictly closer than that class's threshold. ``thresholds`` maps class_id to metres.
    """
    for cid in {d.class_id for d in dets}:
        if cid not in thresholds or not thresholds[cid] > 0:
            raise ConfigError(f"no positive NMS distance for class {cid}")
    ranked = sorted(dets, key=lambda d: (-d.score, d.class_id, d.center[1], d.center[0]))
    kept = DetectionSet()
    kept_xy = {}
    for det in ranked:
        pts = kept_xy.setdefault(det.class_id, [])
        thr = thresholds[det.class_id]
        if any(math.hypot(det.center[0] - x, det.center[1] - y) < thr for x, y in pts):
            continue
        pts.append((det.center[0], det.center[1]))
        kept.append(det)
    return kept


# -- CSV serialization --------------------------------------------------------

DET_COLUMNS = ("frame", "class", "score", "x", "y", "z", "l", "w", "h", "yaw")
GT_COLUMNS = ("frame", "class", "x", "y", "z", "l", "w", "h", "yaw", "tags")


def _fmt(x):
    return repr(float(x))


def write_boxes_csv(path, boxes, class_names, with_score=True):
    cols = DET_COLUMNS if with_score else GT_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for b in boxes:
            geo = [_fmt(v) for v in (*b.center, *b.size, b.yaw)]
            if with_score:
                writer.writerow([b.frame, class_names[b.class_id], _fmt(b.score), *geo])
            else:
                writer.writerow([b.frame, class_names[b.class_id], *geo, ";".join(b.tags)])


def read_boxes_csv(path, class_names):
    """Read detection or ground-truth CSV (the ``score`` column is optional)."""
    lookup = {name.lower(): i for i, name in enumerate(class_names)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"frame", "class", "x", "y", "z", "l", "w", "h", "yaw"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {sorted(required)}")
        for lineno, row in enumerate(reader, 2):
            name = row["class"].strip().lower()
            if name not in lookup:
                continue
            try:
                geo = [float(row[k]) for k in ("x", "y", "z", "l", "w", "h", "yaw")]
                score = float(row["score"]) if row.get("score") not in (None, "") else None
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            tags = tuple(t for t in (row.get("tags") or "").split(";") if t)
            out.append(Box3D(geo[:3], geo[3:6], geo[6], lookup[name], score, row["frame"].strip(), tags))
    return out
