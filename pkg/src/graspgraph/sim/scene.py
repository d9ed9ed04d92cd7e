"""Clutter scenes: placement by rejection sampling, matching, ground truth, I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import GRID_RESOLUTION, CameraModel, RigidPose, VoxelGrid
from .shapes import SHAPE_KINDS, ShapeModel, make_shape, random_dimensions

MAX_PLACEMENT_ATTEMPTS = 10_000


class SceneGenerationError(RuntimeError):
    """Raised when rejection sampling cannot place all objects."""


@dataclass
class PrimitiveObject:
    shape_kind: str
    dimensions: dict
    pose: RigidPose
    shape_id: int

    @property
    def shape(self) -> ShapeModel:
        return make_shape(self.shape_kind, self.dimensions)

    def world_surface(self):
        """Surface samples and outward normals in the world frame."""
        pts, nrm = self.shape.surface_points()
        return self.pose.apply(pts), nrm @ self.pose.rotation.T

    def world_volume(self):
        return self.pose.apply(self.shape.volume_points())

    def contains_world(self, points, tol=0.0):
        return self.shape.contains(self.pose.inverse().apply(points), tol)


@dataclass
class Scene:
    objects: list
    camera: CameraModel
    table_extent: float
    seed: int | None = None


def default_camera() -> CameraModel:
    """Oblique view covering a 0.5 m table from one side."""
    position = np.array([0.45, 0.0, 0.65])
    target = np.array([0.0, 0.0, 0.02])
    forward = target - position
    forward /= np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)
    return CameraModel(fx=230.0, fy=230.0, cx=100.0, cy=75.0, width=200, height=150,
                       pose=RigidPose(rotation, position))


def _yaw_pose(x, y, yaw) -> RigidPose:
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return RigidPose(rot, [x, y, 0.0])


def _transform_footprint(poly, x, y, yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s], [s, c]])
    return poly @ rot.T + np.array([x, y])


def polygon_gap(poly_a, poly_b) -> float:
    """Largest separation between two convex polygons along any face normal.

    Positive means disjoint by at least that margin (a lower bound on the true
    distance); non-positive means touching or overlapping.
    """
    best = -np.inf
    for p, q in ((poly_a, poly_b), (poly_b, poly_a)):
        edges = np.roll(p, -1, axis=0) - p
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        lengths = np.linalg.norm(normals, axis=1)
        normals = normals[lengths > 1e-12] / lengths[lengths > 1e-12, None]
        for n in normals:
            gap = (q @ n).min() - (p @ n).max()
            best = max(best, gap)
    return best


def _enclosing_circle(poly):
    center = poly.mean(axis=0)
    return center, float(np.linalg.norm(poly - center, axis=1).max())


def _fits(foot_new, placed_feet, clearance, half_table):
    for poly, _, _ in foot_new:
        if np.abs(poly).max() > half_table:
            return False
    for feet in placed_feet:
        for a, ca, ra in foot_new:
            for b, cb, rb in feet:
                if np.linalg.norm(ca - cb) >= ra + rb + clearance:
                    continue
                if polygon_gap(a, b) < clearance:
                    return False
    return True


def generate_scene(seed, object_count, sets_of_identicals=1, *,
                   table_extent=0.5, camera=None, dim_range=(0.03, 0.055),
                   kinds=SHAPE_KINDS) -> Scene:
    """Rejection-sample resting placements for identical-set clutter.

    object_count must be divisible by sets_of_identicals; each distinct shape
    (kind cycling through `kinds`, dimensions drawn from dim_range) appears
    sets_of_identicals times sharing one shape_id.  Placements draw uniform
    positions over the table and uniform yaw; every 100 consecutive rejections
    the required spacing radius around existing objects shrinks, packing the
    scene tighter until everything fits.
    """
    if object_count < 1:
        raise ValueError(f"object_count must be >= 1, got {object_count}")
    if object_count % sets_of_identicals:
        raise ValueError(f"object_count {object_count} not divisible by "
                         f"sets_of_identicals {sets_of_identicals}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    seed_value = seed if isinstance(seed, (int, np.integer)) else None

    distinct = object_count // sets_of_identicals
    catalog = [(kinds[i % len(kinds)],
                random_dimensions(kinds[i % len(kinds)], rng, *dim_range))
               for i in range(distinct)]

    half_table = table_extent / 2.0
    clearance = 0.008
    attempts = 0
    consecutive_rejections = 0
    objects = []
    placed_feet = []
    for copy in range(sets_of_identicals):
        for shape_id, (kind, dims) in enumerate(catalog):
            shape = make_shape(kind, dims)
            feet = shape.footprints()
            span = max(half_table - shape.max_radius, 0.05)
            while True:
                attempts += 1
                if attempts > MAX_PLACEMENT_ATTEMPTS:
                    raise SceneGenerationError(
                        f"could not place object {len(objects) + 1}/{object_count} "
                        f"after {MAX_PLACEMENT_ATTEMPTS} attempts")
                x = rng.uniform(-span, span)
                y = rng.uniform(-span, span)
                yaw = rng.uniform(0.0, 2.0 * np.pi)
                foot_new = []
                for p in feet:
                    poly = _transform_footprint(p, x, y, yaw)
                    foot_new.append((poly, *_enclosing_circle(poly)))
                if _fits(foot_new, placed_feet, clearance, half_table):
                    objects.append(PrimitiveObject(kind, dims, _yaw_pose(x, y, yaw),
                                                   shape_id))
                    placed_feet.append(foot_new)
                    consecutive_rejections = 0
                    break
                consecutive_rejections += 1
                if consecutive_rejections % 100 == 0:
                    clearance = max(clearance * 0.6, 1e-4)
    return Scene(objects, camera or default_camera(), table_extent, seed_value)


def match_targets(scene: Scene, target_shape_id: int) -> list:
    """Indices of all objects sharing the target's shape identity."""
    matches = [i for i, obj in enumerate(scene.objects)
               if obj.shape_id == target_shape_id]
    dims = [scene.objects[i].dimensions for i in matches]
    if any(d != dims[0] for d in dims[1:]):
        raise ValueError(f"shape_id {target_shape_id} spans differing dimensions")
    return matches


def complete_voxel_ground_truth(scene: Scene, object_index: int, extent: float,
                                origin, frame: RigidPose | None = None) -> VoxelGrid:
    """Analytic full-shape occupancy: cell is 1 iff its center is inside.

    origin is the grid's minimum corner expressed in `frame` (world frame when
    None); the grid axes follow that frame.
    """
    obj = scene.objects[object_index]
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    size = extent / GRID_RESOLUTION
    axis = (np.arange(GRID_RESOLUTION) + 0.5) * size
    centers = np.stack(np.meshgrid(*(axis,) * 3, indexing="ij"), axis=-1)
    centers = centers.reshape(-1, 3) + origin
    if frame is not None:
        centers = frame.apply(centers)
    occ = obj.contains_world(centers).reshape((GRID_RESOLUTION,) * 3)
    return VoxelGrid(occ, extent, origin)


# -- serialization -----------------------------------------------------------

def _pose_to_dict(pose: RigidPose) -> dict:
    return {"translation": [float(v) for v in pose.translation],
            "quaternion_wxyz": [float(v) for v in pose.as_quaternion()]}


def _pose_from_dict(d) -> RigidPose:
    return RigidPose.from_quaternion(d["quaternion_wxyz"], d["translation"])


def scene_to_dict(scene: Scene) -> dict:
    cam = scene.camera
    return {
        "seed": scene.seed,
        "table_extent": scene.table_extent,
        "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                   "width": cam.width, "height": cam.height,
                   "pose": _pose_to_dict(cam.pose)},
        "objects": [{"shape_kind": o.shape_kind,
                     "dimensions": {k: float(v) for k, v in sorted(o.dimensions.items())},
                     "pose": _pose_to_dict(o.pose),
                     "shape_id": o.shape_id} for o in scene.objects],
    }


def scene_from_dict(d) -> Scene:
    cam = d["camera"]
    camera = CameraModel(fx=cam["fx"], fy=cam["fy"], cx=cam["cx"], cy=cam["cy"],
                         width=cam["width"], height=cam["height"],
                         pose=_pose_from_dict(cam["pose"]))
    objects = [PrimitiveObject(o["shape_kind"], dict(o["dimensions"]),
                               _pose_from_dict(o["pose"]), o["shape_id"])
               for o in d["objects"]]
    return Scene(objects, camera, d["table_extent"], d.get("seed"))


def save_scene(path, scene: Scene) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), sort_keys=True,
                                     indent=2) + "\n")


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
