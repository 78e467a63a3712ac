"""Radar-camera BEV lifting: projection geometry, occupancy/depth-weighted sampling,
center-based decoding and KITTI-style evaluation, all on numpy."""

from .config import PipelineConfig, load_config
from .estimators import ChannelNormalizer, RadarCameraDetector, ViewTransformer
from .evaluation import EvalRegion, MatchConfig, average_precision, box_iou, evaluate
from .exceptions import (BevliftError, ConfigError, DataError, InvalidCalibrationError,
                         InvalidStatsError, NumericalError, PipelineError, ShapeError)
from .geometry import (CalibrationSet, CameraIntrinsics, GridSpec, RigidTransform, extend_transform,
                       in_view, project_points, voxel_centers)
from .head import Box3D, DetectionSet, decode_detections, distance_nms, heatmap_targets
from .nets import Conv1x1Weights, DepthBinSpec, HeadWeights, depth_net, fuse_bev, occupancy_net
from .pipeline import Frame, run_frames, run_pipeline
from .pointcloud import NormalizationStats, RadarPointCloud, normalize, pillarize
from .synth import SceneSpec, generate_scene, ideal_depth_distribution, ideal_occupancy

__version__ = "0.1.0"

__all__ = [
    "BevliftError", "Box3D", "CalibrationSet", "CameraIntrinsics", "ChannelNormalizer", "ConfigError",
    "Conv1x1Weights", "DataError", "DepthBinSpec", "DetectionSet", "EvalRegion", "Frame", "GridSpec",
    "HeadWeights", "InvalidCalibrationError", "InvalidStatsError", "MatchConfig", "NormalizationStats",
    "NumericalError", "PipelineConfig", "PipelineError", "RadarCameraDetector", "RadarPointCloud",
    "RigidTransform", "SceneSpec", "ShapeError", "ViewTransformer", "average_precision", "box_iou",
    "decode_detections", "depth_net", "distance_nms", "evaluate", "extend_transform", "fuse_bev",
    "generate_scene", "heatmap_targets", "ideal_depth_distribution", "ideal_occupancy", "in_view",
    "load_config", "normalize", "occupancy_net", "pillarize", "project_points", "run_frames",
    "run_pipeline", "voxel_centers",
]
