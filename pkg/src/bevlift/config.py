"""Flat ``key = value`` configuration files and the derived pipeline settings."""

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .evaluation import EvalRegion, MatchConfig
from .exceptions import ConfigError
from .geometry import CalibrationSet, CameraIntrinsics, GridSpec, extend_transform
from .nets import DepthBinSpec

STRATEGIES = ("sampling", "splatting", "depth-sampling", "occ-depth-sampling", "crn-occ-sampling")
PRESETS = ("vod", "tj4d")


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into a dict of strings; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("bevlift").joinpath("presets").joinpath(f"{name}.cfg").read_text()


class _Reader:
    """Typed access to the raw dict that remembers which keys were consumed."""

    def __init__(self, raw, source):
        self.raw = raw
        self.source = source
        self.used = set()

    def _get(self, key, default):
        self.used.add(key)
        if key in self.raw:
            return self.raw[key]
        if default is _REQUIRED:
            raise ConfigError(f"{self.source}: missing key {key!r}")
        return default

    def str(self, key, default=None):
        return self._get(key, _REQUIRED if default is None else default)

    def float(self, key, default=None):
        val = self._get(key, _REQUIRED if default is None else default)
        try:
            out = float(val)
        except (TypeError, ValueError):
            raise ConfigError(f"{self.source}: {key} must be a number, got {val!r}") from None
        if not math.isfinite(out):
            raise ConfigError(f"{self.source}: {key} must be finite")
        return out

    def int(self, key, default=None):
        val = self.float(key, default)
        if val != int(val):
            raise ConfigError(f"{self.source}: {key} must be an integer")
        return int(val)

    def floats(self, key, n=None, default=None):
        val = self._get(key, _REQUIRED if default is None else default)
        try:
            out = [float(t) for t in str(val).replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{self.source}: {key} must be numbers, got {val!r}") from None
        if n is not None and len(out) != n:
            raise ConfigError(f"{self.source}: {key} needs {n} numbers, got {len(out)}")
        return out

    def names(self, key, default=None):
        val = self._get(key, _REQUIRED if default is None else default)
        return tuple(t.strip() for t in str(val).split(",") if t.strip())


_REQUIRED = object()


@dataclass(frozen=True)
class ClassInfo:
    name: str
    iou: float
    nms: float


@dataclass(frozen=True)
class PipelineConfig:
    pcr: GridSpec
    pillar_spec: GridSpec
    bev_spec: GridSpec
    radar_stride: int
    radar_layout: tuple
    radar_skip: tuple
    bins: DepthBinSpec
    strides: tuple
    image_channels: int
    fused_channels: int
    strategy: str
    classes: tuple
    iou_mode: str = "3d"
    corridor: EvalRegion = field(default_factory=EvalRegion.corridor)
    bands: tuple = ((0.0, 25.0), (25.0, 50.0), (50.0, 70.0))
    min_radius: int = 2
    top_k: int = 1000
    score_threshold: float = 0.1
    heatmap_prior: float = 0.01
    weights_path: str = None
    weights_seed: int = 0
    camera: CalibrationSet = None
    synth: dict = field(default_factory=dict)
    radar_norm: tuple = None
    image_norm: tuple = None
    dataset: str = ""

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown lifting strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        px, py, _ = self.pillar_spec.shape
        if px % self.radar_stride or py % self.radar_stride:
            raise ConfigError("pillar grid is not divisible by the radar stride")
        if self.bev_spec.shape[:2] != (px // self.radar_stride, py // self.radar_stride):
            raise ConfigError("BEV grid does not match pillar grid / radar stride")
        if not self.strides or any(s < 1 for s in self.strides):
            raise ConfigError("image strides must be positive integers")
        if not self.classes:
            raise ConfigError("at least one class is required")

    @property
    def class_names(self):
        return tuple(c.name for c in self.classes)

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def n_levels(self):
        return len(self.strides)

    @property
    def match_config(self):
        return MatchConfig({i: c.iou for i, c in enumerate(self.classes)}, self.iou_mode)

    @property
    def nms_thresholds(self):
        return {i: c.nms for i, c in enumerate(self.classes)}

    @property
    def radar_channels(self):
        """Channels per radar point (all of ``radar_layout``)."""
        return len(self.radar_layout)

    def regions(self, names=("eaa", "roi", "bands")):
        out = []
        for name in names:
            if name == "eaa":
                out.append(EvalRegion.entire())
            elif name == "roi":
                out.append(self.corridor)
            elif name == "bands":
                out.extend(EvalRegion.band(lo, hi) for lo, hi in self.bands)
            elif name.startswith("tag:"):
                out.append(EvalRegion.tagged(name[4:]))
            else:
                raise ConfigError(f"unknown region {name!r}; use eaa, roi, bands or tag:<name>")
        return out

    def with_strategy(self, strategy):
        return replace(self, strategy=strategy)


def _bands(text, source):
    out = []
    for tok in text.split(","):
        lo, sep, hi = tok.strip().partition("-")
        try:
            out.append((float(lo), float(hi)))
        except ValueError:
            raise ConfigError(f"{source}: bad range band {tok!r}") from None
        if not sep or out[-1][1] <= out[-1][0]:
            raise ConfigError(f"{source}: bad range band {tok!r}")
    return tuple(out)


def build_config(raw, source="<config>", base_dir=None):
    r = _Reader(raw, source)
    lo = [r.float(f"pcr.{a}_min") for a in "xyz"]
    hi = [r.float(f"pcr.{a}_max") for a in "xyz"]
    px, py = r.float("pillar.size_x"), r.float("pillar.size_y")
    stride = r.int("radar.stride", "1")
    cz = r.float("voxel.size_z")
    bounds = (lo[0], hi[0], lo[1], hi[1], lo[2], hi[2])
    pcr = GridSpec(*bounds, px, py, hi[2] - lo[2])
    pillar = GridSpec(*bounds, px, py, hi[2] - lo[2])
    bev = GridSpec(*bounds, px * stride, py * stride, cz)

    classes = []
    for name in r.names("classes"):
        classes.append(ClassInfo(name, r.float(f"class.{name}.iou"), r.float(f"class.{name}.nms")))

    camera = None
    if "camera.fx" in raw:
        intr = CameraIntrinsics.from_pinhole(
            r.float("camera.fx"), r.float("camera.fy"), r.float("camera.cx"), r.float("camera.cy"),
            r.int("camera.width"), r.int("camera.height"))
        rot = np.reshape(r.floats("camera.rotation", 9), (3, 3))
        camera = CalibrationSet(intr, extend_transform(rot, r.floats("camera.translation", 3)))

    synth = {}
    if "synth.counts" in raw:
        counts = {}
        for tok in r.names("synth.counts"):
            name, _, n = tok.partition(":")
            try:
                counts[name.strip()] = int(n)
            except ValueError:
                raise ConfigError(f"{source}: bad synth count {tok!r}") from None
        synth = {
            "counts": counts,
            "noise_sigma": r.float("synth.noise_sigma", "0.05"),
            "clutter_rate": r.float("synth.clutter_rate", "0.01"),
            "surface_density": r.float("synth.surface_density", "2.0"),
            "ground_z": r.float("synth.ground_z", "-1.2"),
        }

    norms = {}
    for which in ("radar", "image"):
        if f"norm.{which}.mean" in raw or f"norm.{which}.std" in raw:
            norms[which] = (tuple(r.floats(f"norm.{which}.mean")), tuple(r.floats(f"norm.{which}.std")))

    weights_path = raw.get("weights.path")
    r.used.add("weights.path")
    if weights_path and base_dir is not None and not Path(weights_path).is_absolute():
        weights_path = str(Path(base_dir) / weights_path)

    iou_mode = r.str("eval.iou_mode", "3d")
    if iou_mode not in ("bev", "3d"):
        raise ConfigError(f"{source}: eval.iou_mode must be bev or 3d")

    cfg = PipelineConfig(
        pcr=pcr,
        pillar_spec=pillar,
        bev_spec=bev,
        radar_stride=stride,
        radar_layout=r.names("radar.layout"),
        radar_skip=r.names("radar.skip_norm", "x,y,z,t"),
        bins=DepthBinSpec(r.float("depth.d_min"), r.float("depth.d_max"), r.int("depth.bins")),
        strides=tuple(int(s) for s in r.floats("image.strides")),
        image_channels=r.int("image.channels"),
        fused_channels=r.int("fusion.channels", "16"),
        strategy=r.str("lifting.strategy", "occ-depth-sampling"),
        classes=tuple(classes),
        iou_mode=iou_mode,
        corridor=EvalRegion.corridor(r.float("eval.corridor.x_min", "-4"), r.float("eval.corridor.x_max", "4"),
                                     r.float("eval.corridor.z_max", "25")),
        bands=_bands(r.str("eval.bands", "0-25,25-50,50-70"), source),
        min_radius=r.int("head.min_radius", "2"),
        top_k=r.int("head.top_k", "1000"),
        score_threshold=r.float("head.score_threshold", "0.1"),
        heatmap_prior=r.float("head.heatmap_prior", "0.01"),
        weights_path=weights_path,
        weights_seed=r.int("weights.seed", "0"),
        camera=camera,
        synth=synth,
        radar_norm=norms.get("radar"),
        image_norm=norms.get("image"),
        dataset=r.str("dataset", ""),
    )
    if cfg.top_k <= 0:
        raise ConfigError(f"{source}: head.top_k must be positive")
    if not 0 < cfg.heatmap_prior < 1:
        raise ConfigError(f"{source}: head.heatmap_prior must be in (0, 1)")
    unknown = set(raw) - r.used
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
    return cfg


def load_config(path_or_preset):
    """Load a config file, or a shipped preset by name (``vod``, ``tj4d``).

    A file may start with ``preset = <name>`` to inherit a preset and override keys.
    """
    if str(path_or_preset) in PRESETS:
        return build_config(parse_config_text(preset_text(path_or_preset), path_or_preset), path_or_preset)
    path = Path(path_or_preset)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = parse_config_text(text, str(path))
    if "preset" in raw:
        base = parse_config_text(preset_text(raw.pop("preset")), "preset")
        base.update(raw)
        raw = base
    return build_config(raw, str(path), path.parent)
