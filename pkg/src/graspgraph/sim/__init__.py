"""Synthetic scenes: shapes, placement, depth rendering, and the grasp oracle."""

from .oracle import (
    APPROACH_SWEEP,
    SWEEP_TOLERANCE,
    GripperModel,
    OracleResult,
    oracle_evaluate,
    swept_boxes,
)
from .render import render_depth
from .scene import (
    PrimitiveObject,
    Scene,
    SceneGenerationError,
    complete_voxel_ground_truth,
    default_camera,
    generate_scene,
    load_scene,
    match_targets,
    polygon_gap,
    save_scene,
    scene_from_dict,
    scene_to_dict,
)
from .shapes import (
    NOVEL_SHAPE_KINDS,
    SHAPE_KINDS,
    ShapeModel,
    make_shape,
    random_dimensions,
)

__all__ = [
    "APPROACH_SWEEP",
    "GripperModel",
    "NOVEL_SHAPE_KINDS",
    "OracleResult",
    "PrimitiveObject",
    "SHAPE_KINDS",
    "SWEEP_TOLERANCE",
    "Scene",
    "SceneGenerationError",
    "ShapeModel",
    "complete_voxel_ground_truth",
    "default_camera",
    "generate_scene",
    "load_scene",
    "make_shape",
    "match_targets",
    "oracle_evaluate",
    "polygon_gap",
    "random_dimensions",
    "render_depth",
    "save_scene",
    "scene_from_dict",
    "scene_to_dict",
    "swept_boxes",
]
