"""Analytic parallel-jaw grasp oracle.

Grasp frame convention: tool center point at the origin, +z the approach
direction, +x the finger closing direction.  Fingers occupy z in [0,
finger_depth] ahead of the TCP; the palm sits behind it.  The gripper
approaches along +z from 0.1 m out, so its swept volume is the union of three
boxes elongated backward along -z.

Success requires (a) the sweep to clear the table and not displace any object
by more than the 0.01 m sweep tolerance, (b) an antipodal contact pair on the
target inside both friction cones when closing along +-x, and (c) the target
width along the closing line to fit in the finger span.  Shallow intrusions
into non-targets are tolerated and counted as minor collisions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import RigidPose
from .scene import Scene

APPROACH_SWEEP = 0.1       # travel distance toward the grasp pose
SWEEP_TOLERANCE = 0.01     # deeper intrusions than this are fatal
CONTACT_REGION = 0.002     # band behind each extreme face that counts as contact

FAILURE_REASONS = ("none", "collision_fatal", "no_contact", "force_closure_fail",
                   "empty_candidate_set")


@dataclass(frozen=True)
class GripperModel:
    finger_span: float = 0.08
    finger_width: float = 0.015
    finger_depth: float = 0.05
    palm_depth: float = 0.03
    friction_coefficient: float = 0.5

    def __post_init__(self):
        for name in ("finger_span", "finger_width", "finger_depth", "palm_depth",
                     "friction_coefficient"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def cone_cos(self) -> float:
        """Cosine of the friction-cone half angle arctan(mu)."""
        mu = self.friction_coefficient
        return 1.0 / np.sqrt(1.0 + mu * mu)


@dataclass
class OracleResult:
    success: int
    failure_reason: str
    swept_minor_collisions: int = 0

    def __post_init__(self):
        if self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")
        if self.success and self.failure_reason != "none":
            raise ValueError("successful result must carry reason 'none'")


def swept_boxes(gripper: GripperModel):
    """(lo, hi) corners of the swept finger/finger/palm boxes in the grasp frame."""
    half_span = gripper.finger_span / 2.0
    fw = gripper.finger_width
    hy = fw / 2.0
    return [
        (np.array([half_span, -hy, -APPROACH_SWEEP]),
         np.array([half_span + fw, hy, gripper.finger_depth])),
        (np.array([-half_span - fw, -hy, -APPROACH_SWEEP]),
         np.array([-half_span, hy, gripper.finger_depth])),
        (np.array([-half_span - fw, -hy, -APPROACH_SWEEP - gripper.palm_depth]),
         np.array([half_span + fw, hy, 0.0])),
    ]


def _escape_distance(points, lo, hi):
    """Smallest translation that moves every intruding point out of [lo, hi].

    Proxy for how far the box would displace the object: the object may
    retreat along any of the six axis directions, and each direction costs
    as much as its deepest point.  0 when no point is strictly inside.
    """
    inside = np.all((points > lo) & (points < hi), axis=1)
    if not inside.any():
        return 0.0
    p = points[inside]
    per_direction = np.concatenate([(hi - p).max(axis=0), (p - lo).max(axis=0)])
    return float(per_direction.min())


def _sweep_hits_table(grasp: RigidPose, boxes) -> bool:
    corners = []
    for lo, hi in boxes:
        for cx in (lo[0], hi[0]):
            for cy in (lo[1], hi[1]):
                for cz in (lo[2], hi[2]):
                    corners.append((cx, cy, cz))
    world = grasp.apply(np.array(corners))
    return bool(world[:, 2].min() < -1e-6)


def oracle_evaluate(scene: Scene, grasp: RigidPose, target_index: int,
                    gripper: GripperModel | None = None) -> OracleResult:
    """Deterministic success/failure verdict for one world-frame grasp pose."""
    gripper = gripper or GripperModel()
    if not 0 <= target_index < len(scene.objects):
        raise IndexError(f"target_index {target_index} out of range "
                         f"[0, {len(scene.objects)})")
    boxes = swept_boxes(gripper)
    if _sweep_hits_table(grasp, boxes):
        return OracleResult(0, "collision_fatal")

    inv = grasp.inverse()
    hy = gripper.finger_width / 2.0
    half_span = gripper.finger_span / 2.0
    minor_objects = set()
    for index, obj in enumerate(scene.objects):
        pts = inv.apply(np.vstack([obj.world_surface()[0], obj.world_volume()]))
        displacement = max(_escape_distance(pts, lo, hi) for lo, hi in boxes)
        # nanometer slack so exact-boundary overlaps do not flip on rounding
        if displacement > SWEEP_TOLERANCE + 1e-9:
            return OracleResult(0, "collision_fatal")
        if index != target_index:
            if displacement > 0.0:
                minor_objects.add(index)
            # objects sitting between the open fingers get nudged on close
            in_band = ((np.abs(pts[:, 0]) <= half_span) & (np.abs(pts[:, 1]) <= hy)
                       & (pts[:, 2] >= 0.0) & (pts[:, 2] <= gripper.finger_depth))
            if in_band.any():
                minor_objects.add(index)
    minor = len(minor_objects)

    surface_w, normals_w = scene.objects[target_index].world_surface()
    pts = inv.apply(surface_w)
    normals = normals_w @ grasp.rotation   # rows: world->grasp is R^T on vectors
    in_band = ((np.abs(pts[:, 1]) <= hy) & (pts[:, 2] >= 0.0)
               & (pts[:, 2] <= gripper.finger_depth))
    if not in_band.any():
        return OracleResult(0, "no_contact", minor)
    x = pts[in_band, 0]
    nx = normals[in_band, 0]
    width = float(x.max() - x.min())
    if width > gripper.finger_span:
        return OracleResult(0, "force_closure_fail", minor)
    right_ok = bool(np.any((x >= x.max() - CONTACT_REGION) & (nx >= gripper.cone_cos)))
    left_ok = bool(np.any((x <= x.min() + CONTACT_REGION) & (-nx >= gripper.cone_cos)))
    if right_ok and left_ok:
        return OracleResult(1, "none", minor)
    return OracleResult(0, "force_closure_fail", minor)
