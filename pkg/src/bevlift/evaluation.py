"""Rotated-box IoU, region filters and 40-point interpolated AP."""

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError

N_RECALL_POINTS = 40


# -- IoU ----------------------------------------------------------------------

def polygon_area(poly):
    """Signed shoelace area (positive for counter-clockwise)."""
    n = len(poly)
    if n < 3:
        return 0.0
    s = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def clip_polygon(subject, clip):
    """Sutherland-Hodgman: intersect ``subject`` with the convex CCW polygon ``clip``."""
    out = list(subject)
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        src, out = out, []
        for j in range(len(src)):
            p, q = src[j], src[(j + 1) % len(src)]
            sp, sq = side(p), side(q)
            if sp >= 0:
                out.append(p)
            if (sp >= 0) != (sq >= 0):
                t = sp / (sp - sq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def bev_intersection(a, b):
    return abs(polygon_area(clip_polygon(a.bev_corners(), b.bev_corners())))


def box_iou(a, b, mode="bev"):
    """IoU of two oriented boxes on the ground plane (``bev``) or in 3D (``3d``)."""
    area_a = a.size[0] * a.size[1]
    area_b = b.size[0] * b.size[1]
    if area_a <= 0 or area_b <= 0:
        raise DataError("degenerate box with zero footprint")
    inter = bev_intersection(a, b)
    if mode == "bev":
        union = area_a + area_b - inter
        return min(1.0, max(0.0, inter / union))
    if mode != "3d":
        raise ConfigError(f"unknown IoU mode {mode!r}")
    za0, za1 = a.center[2] - a.size[2] / 2, a.center[2] + a.size[2] / 2
    zb0, zb1 = b.center[2] - b.size[2] / 2, b.center[2] + b.size[2] / 2
    overlap = max(0.0, min(za1, zb1) - max(za0, zb0))
    inter3 = inter * overlap
    union3 = area_a * a.size[2] + area_b * b.size[2] - inter3
    return min(1.0, max(0.0, inter3 / union3))


# -- regions ------------------------------------------------------------------

@dataclass(frozen=True)
class EvalRegion:
    """Where boxes count: ``eaa`` (all), ``corridor``, ``band`` or ``tag``."""

    kind: str = "eaa"
    x_min: float = -4.0
    x_max: float = 4.0
    z_max: float = 25.0
    r_min: float = 0.0
    r_max: float = math.inf
    tag: str = ""

    def __post_init__(self):
        if self.kind not in ("eaa", "corridor", "band", "tag"):
            raise ConfigError(f"unknown region kind {self.kind!r}")

    @property
    def name(self):
        if self.kind == "band":
            return f"band_{self.r_min:g}-{self.r_max:g}m"
        if self.kind == "tag":
            return f"tag_{self.tag}"
        return {"eaa": "eaa", "corridor": "roi"}[self.kind]

    @classmethod
    def entire(cls):
        return cls("eaa")

    @classmethod
    def corridor(cls, x_min=-4.0, x_max=4.0, z_max=25.0):
        return cls("corridor", x_min=x_min, x_max=x_max, z_max=z_max)

    @classmethod
    def band(cls, r_min, r_max):
        return cls("band", r_min=float(r_min), r_max=float(r_max))

    @classmethod
    def tagged(cls, tag):
        return cls("tag", tag=tag)


@dataclass(frozen=True)
class MatchConfig:
    iou_thresholds: dict
    iou_mode: str = "3d"

    def __post_init__(self):
        if self.iou_mode not in ("bev", "3d"):
            raise ConfigError(f"iou_mode must be 'bev' or '3d', got {self.iou_mode!r}")
        for cid, thr in self.iou_thresholds.items():
            if not 0 < thr <= 1:
                raise ConfigError(f"IoU threshold for class {cid} must be in (0, 1]")


def _calib_for(calib, frame):
    if calib is None:
        raise ConfigError("the corridor region needs a calibration")
    if callable(calib):
        return calib(frame)
    if isinstance(calib, dict):
        try:
            return calib[frame]
        except KeyError:
            raise DataError(f"no calibration for frame {frame!r}") from None
    return calib


def region_filter(boxes, region, calib=None, frame_tags=None):
    """Keep boxes whose centre satisfies the region predicate.

    ``calib`` may be one calibration, a ``frame -> calib`` dict or a callable;
    ``frame_tags`` maps frame id to its tag set (for ``tag`` regions).
    """
    if region.kind == "eaa":
        return list(boxes)
    if region.kind == "band":
        return [b for b in boxes if region.r_min <= math.hypot(b.center[0], b.center[1]) < region.r_max]
    if region.kind == "tag":
        tags = frame_tags or {}
        return [b for b in boxes if region.tag in tags.get(b.frame, ())]
    out = []
    for b in boxes:
        cam = _calib_for(calib, b.frame).radar_to_camera.apply(np.array([b.center]))[0]
        if region.x_min < cam[0] < region.x_max and cam[2] < region.z_max:
            out.append(b)
    return out


def frame_tags_from(gts):
    tags = defaultdict(set)
    for b in gts:
        tags[b.frame].update(b.tags)
    return dict(tags)


# -- AP -------------------------------------------------------------------------

@dataclass
class APResult:
    value: float
    n_gt: int
    n_det: int
    empty: bool
    recall: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    precision: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def __float__(self):
        return float(self.value)


def match_frame(dets, gts, threshold, mode):
    """Greedy score-descending matching within one frame; returns TP flags per det."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    used = [False] * len(gts)
    tp = np.zeros(len(dets), dtype=bool)
    for i in order:
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if used[j]:
                continue
            iou = box_iou(dets[i], g, mode)
            if iou > best:
                best, best_j = iou, j
        if best_j >= 0 and best >= threshold:
            used[best_j] = True
            tp[i] = True
    return tp


def interpolated_ap(recall, precision, n_points=N_RECALL_POINTS):
    """Mean over ``r = 1/n, ..., 1`` of the best precision at recall ``>= r``."""
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    total = 0.0
    for i in range(1, n_points + 1):
        sel = recall >= i / n_points - 1e-12
        total += precision[sel].max() if sel.any() else 0.0
    return total / n_points


def average_precision(dets, gts, cfg, region=None, class_id=0, calib=None, frame_tags=None):
    """40-point interpolated AP of one class inside ``region``.

    Detections without a score count as score 1. With no ground truth in the region the AP is reported as 0 and flagged empty.
    """
    region = region or EvalRegion.entire()
    if frame_tags is None:
        frame_tags = frame_tags_from(gts)
    gts = region_filter([g for g in gts if g.class_id == class_id], region, calib, frame_tags)
    dets = region_filter([d if d.score is not None else replace(d, score=1.0)
                          for d in dets if d.class_id == class_id], region, calib, frame_tags)
    if not gts:
        return APResult(0.0, 0, len(dets), True)
    threshold = cfg.iou_thresholds[class_id]
    by_frame_d, by_frame_g = defaultdict(list), defaultdict(list)
    for d in dets:
        by_frame_d[d.frame].append(d)
    for g in gts:
        by_frame_g[g.frame].append(g)
    records = []
    for frame in sorted(by_frame_d):
        fd = by_frame_d[frame]
        tp = match_frame(fd, by_frame_g.get(frame, []), threshold, cfg.iou_mode)
        records.extend((-d.score, frame, i, bool(t)) for i, (d, t) in enumerate(zip(fd, tp)))
    records.sort()
    hits = np.array([r[3] for r in records], dtype=np.float64)
    tp_cum = np.cumsum(hits)
    recall = tp_cum / len(gts)
    precision = tp_cum / np.arange(1, len(hits) + 1) if len(hits) else np.zeros(0)
    return APResult(interpolated_ap(recall, precision), len(gts), len(dets), False, recall, precision)


def mean_ap(results):
    """Arithmetic mean over classes; empty classes contribute 0."""
    vals = [float(r) for r in results]
    return sum(vals) / len(vals) if vals else 0.0


def evaluate(dets, gts, cfg, regions, class_names, calib=None):
    """AP for every (class, region) plus the per-region mAP.

    Returns ``{region_name: {class_name: APResult, ..., "mAP": float}}``.
    """
    tags = frame_tags_from(gts)
    report = {}
    for region in regions:
        row = {}
        for cid, name in enumerate(class_names):
            row[name] = average_precision(dets, gts, cfg, region, cid, calib, tags)
        row["mAP"] = mean_ap(row[n] for n in class_names)
        report[region.name] = row
    return report


def write_report(path, report, class_names):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["region", "class", "ap", "n_gt", "n_det", "empty"])
        for region, row in report.items():
            for name in class_names:
                r = row[name]
                writer.writerow([region, name, f"{r.value:.6f}", r.n_gt, r.n_det, int(r.empty)])
            writer.writerow([region, "mAP", f"{row['mAP']:.6f}", "", "", ""])


def write_pr_svg(path, result, title, size=320):
    """Minimal standalone SVG of one precision-recall curve."""
    pad = 40
    span = size - 2 * pad
    pts = " ".join(
        f"{pad + r * span:.2f},{size - pad - p * span:.2f}" for r, p in zip(result.recall, result.precision)
    )
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<text x="{size / 2}" y="{pad / 2}" text-anchor="middle" font-size="12">{title} AP={result.value:.4f}</text>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="11">recall</text>',
        f'<text x="12" y="{size / 2}" font-size="11" transform="rotate(-90 12 {size / 2})">precision</text>',
    ]
    if pts:
        svg.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>')
    svg.append("</svg>")
    Path(path).write_text("\n".join(svg) + "\n")
