"""SE(3) poses, depth back-projection, workspace cropping, voxel grids, normals.

World frame: z up, table surface at z = 0.  Grasp frame: tool center point at
the origin, +z is the approach direction, +x the finger closing direction.
All distances in meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

GRID_RESOLUTION = 32
WORKSPACE_EXTENT = 0.2    # side length of the cube around the grasp point
ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class RigidPose:
    """Element of SE(3): orthonormal rotation plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))
        r = self.rotation
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-5):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-5:
            raise ValueError(f"rotation determinant {np.linalg.det(r):.6f}, expected +1")

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, quat_wxyz, translation) -> "RigidPose":
        w, x, y, z = np.asarray(quat_wxyz, dtype=np.float64)
        rot = Rotation.from_quat([x, y, z, w])     # scipy is scalar-last
        return cls(rot.as_matrix(), translation)

    def as_quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with non-negative w."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if w < 0 else q

    def apply(self, points) -> np.ndarray:
        """Map local points to the parent frame: R p + t."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Pose mapping other's local frame through self, i.e. self applied after other."""
        return RigidPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)


@dataclass
class PointCloud:
    """World- or grasp-frame points with optional per-point instance ids."""

    points: np.ndarray
    object_ids: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.object_ids is not None:
            self.object_ids = np.asarray(self.object_ids, dtype=np.int64).reshape(-1)
            if self.object_ids.shape[0] != self.points.shape[0]:
                raise ValueError(f"{self.points.shape[0]} points but "
                                 f"{self.object_ids.shape[0]} object ids")

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))


@dataclass
class VoxelGrid:
    """32^3 binary occupancy over an axis-aligned cube."""

    occupancy: np.ndarray
    extent: float
    origin: np.ndarray

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.shape != (GRID_RESOLUTION,) * 3:
            raise ValueError(f"occupancy must be {GRID_RESOLUTION}^3, "
                             f"got {self.occupancy.shape}")
        if self.extent <= 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)

    @property
    def voxel_size(self) -> float:
        return self.extent / GRID_RESOLUTION

    def cell_centers(self, indices) -> np.ndarray:
        """World coordinates of the centers of the given (n, 3) cell indices."""
        idx = np.asarray(indices, dtype=np.float64).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.voxel_size


@dataclass
class CameraModel:
    """Pinhole camera; pose maps camera coordinates (z forward) to world."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidPose = field(default_factory=RigidPose.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")


def back_project(depth: np.ndarray, mask: np.ndarray, camera: CameraModel) -> PointCloud:
    """Lift valid masked depth pixels into a world-frame cloud with instance ids.

    depth holds z in meters with 0 marking invalid pixels; mask holds instance
    ids with 0 marking background.
    """
    depth = np.asarray(depth, dtype=np.float64).reshape(camera.height, camera.width)
    mask = np.asarray(mask).reshape(camera.height, camera.width)
    valid = (depth > 0) & (mask > 0)
    if not valid.any():
        return PointCloud.empty()
    v, u = np.nonzero(valid)
    z = depth[v, u]
    x = (u - camera.cx) * z / camera.fx
    y = (v - camera.cy) * z / camera.fy
    cam_points = np.stack([x, y, z], axis=1)
    return PointCloud(camera.pose.apply(cam_points), mask[v, u].astype(np.int64))


def to_grasp_frame(cloud: PointCloud, grasp: RigidPose) -> PointCloud:
    """Express the cloud in the grasp frame: p' = R^-1 (p - t)."""
    return PointCloud(grasp.inverse().apply(cloud.points), cloud.object_ids)


def crop_workspace(cloud: PointCloud, extent: float = WORKSPACE_EXTENT) -> dict:
    """Split a grasp-frame cloud into per-object clouds inside the closed cube.

    Keeps points with every coordinate in [-extent/2, extent/2]; objects left
    with zero points are dropped.  Returns {object_id: PointCloud}, ids sorted.
    """
    if cloud.object_ids is None:
        raise ValueError("crop_workspace requires per-point object ids")
    half = extent / 2.0
    keep = np.all(np.abs(cloud.points) <= half, axis=1)
    out = {}
    for oid in np.unique(cloud.object_ids[keep]):
        sel = keep & (cloud.object_ids == oid)
        out[int(oid)] = PointCloud(cloud.points[sel], cloud.object_ids[sel])
    return out


def voxelize(cloud: PointCloud, extent: float, origin) -> VoxelGrid:
    """Mark each cell containing at least one point; max-face points clamp to 31.

    Points outside the cube are ignored.
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    occ = np.zeros((GRID_RESOLUTION,) * 3, dtype=bool)
    if len(cloud):
        size = extent / GRID_RESOLUTION
        idx = np.floor((cloud.points - origin) / size).astype(np.int64)
        on_max_face = np.isclose(cloud.points - origin, extent, atol=1e-12)
        idx[on_max_face & (idx == GRID_RESOLUTION)] = GRID_RESOLUTION - 1
        inside = np.all((idx >= 0) & (idx < GRID_RESOLUTION), axis=1)
        idx = idx[inside]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(occ, extent, origin)


def surface_normals(cloud: PointCloud, k: int = 10,
                    view_point=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-point unit normals from k-NN covariance; returns (normals, valid).

    The normal is the smallest-eigenvector of the neighborhood covariance.
    When view_point is given, normals are flipped to face it.  A neighborhood
    of rank < 2 (second eigenvalue negligible) marks the point invalid.
    """
    n = len(cloud)
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} points for k={k}, got {n}")
    tree = cKDTree(cloud.points)
    _, neighbor_idx = tree.query(cloud.points, k=k + 1)
    normals = np.zeros((n, 3))
    valid = np.ones(n, dtype=bool)
    for i in range(n):
        nbrs = cloud.points[neighbor_idx[i]]
        cov = np.cov(nbrs.T)
        eigvals, eigvecs = np.linalg.eigh(cov)
        if eigvals[1] < 1e-6 * max(eigvals[2], 1e-300):
            valid[i] = False
            continue
        normals[i] = eigvecs[:, 0]
    if view_point is not None:
        view_point = np.asarray(view_point, dtype=np.float64).reshape(3)
        away = np.einsum("ij,ij->i", normals, cloud.points - view_point) > 0
        normals[away] *= -1.0
    return normals, valid
