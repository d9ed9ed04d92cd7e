"""Grasp-candidate samplers.

Two generators of world-frame parallel-jaw poses around a target's partial
point cloud.  ``sample_uniform`` draws a surface point, a fully random
orientation, and a standoff, and is the data-collection baseline.
``sample_shape_completed`` first infers the target's occluded occupancy, then
rejection-samples poses whose approach direction stays within 45 degrees of
the inward surface normal of a completed-surface cell, so the gripper meets
the (estimated) surface head-on instead of sliding over it.  Rejection of
full-uniform orientations leaves the in-plane roll uniform by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .geometry import (
    WORKSPACE_EXTENT,
    PointCloud,
    RigidPose,
    VoxelGrid,
    surface_normals,
    voxelize,
)
from .models import CompletionParams, complete_shape

STANDOFF_MAX = 0.05
APPROACH_CONE_COS = float(np.cos(np.pi / 4))
REJECTION_BUDGET = 10_000      # attempts allowed per requested candidate
_DRAW_BLOCK = 4096


class SamplerError(RuntimeError):
    """Raised when rejection sampling cannot reach the requested count."""


@dataclass(frozen=True)
class GraspCandidate:
    """One world-frame grasp pose: +z approach, +x closing line, TCP origin."""

    pose: RigidPose
    source_object: int
    standoff: float

    def __post_init__(self):
        if not 0.0 <= self.standoff <= STANDOFF_MAX:
            raise ValueError(f"standoff {self.standoff} outside [0, {STANDOFF_MAX}]")


def angle_ok(approach, normal) -> bool:
    """True iff the angle between approach and -normal is below pi/4."""
    approach = np.asarray(approach, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    for name, v in (("approach", approach), ("normal", normal)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError(f"{name} must be a unit vector")
    return float(approach @ -normal) > APPROACH_CONE_COS


def _rotations_from_gaussians(raw: np.ndarray) -> np.ndarray:
    """(n, 4) gaussians -> (n, 3, 3) uniformly distributed rotations."""
    q = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def _cloud_object(cloud: PointCloud) -> int:
    if cloud.object_ids is not None and len(cloud):
        return int(cloud.object_ids[0])
    return 0


def sample_uniform(cloud: PointCloud, n: int, seed: int = 0) -> list[GraspCandidate]:
    """n candidates: uniform surface point, SO(3) orientation, and standoff."""
    if len(cloud) == 0:
        raise ValueError("cannot sample grasps from an empty cloud")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(cloud), size=n)
    rots = _rotations_from_gaussians(rng.standard_normal((n, 4)))
    standoffs = rng.uniform(0.0, STANDOFF_MAX, size=n)
    source = _cloud_object(cloud)
    out = []
    for i in range(n):
        approach = rots[i, :, 2]
        tcp = cloud.points[picks[i]] - standoffs[i] * approach
        out.append(GraspCandidate(RigidPose(rots[i], tcp), source, float(standoffs[i])))
    return out


def build_completion_grid(partial_cloud: PointCloud, completion: CompletionParams,
                          ) -> tuple[VoxelGrid, VoxelGrid]:
    """(partial, completed) occupancy over a centroid-centered workspace cube."""
    if len(partial_cloud) == 0:
        raise ValueError("cannot sample grasps from an empty cloud")
    centroid = partial_cloud.points.mean(axis=0)
    origin = centroid - WORKSPACE_EXTENT / 2.0
    partial = voxelize(partial_cloud, WORKSPACE_EXTENT, origin)
    return partial, complete_shape(partial, completion)


def completed_surface_cells(grid: VoxelGrid):
    """Surface cells of an occupancy grid with outward-oriented normals.

    A cell is surface if occupied with at least one empty 6-neighbor
    (out-of-grid counts as empty).  Normals come from neighborhood PCA,
    oriented along the local negative occupancy gradient (occupied mass
    behind, empty space ahead).  Returns (indices, centers, normals, valid).
    """
    occ = grid.occupancy
    padded = np.zeros(np.array(occ.shape) + 2, dtype=bool)
    padded[1:-1, 1:-1, 1:-1] = occ
    full = np.ones_like(occ)
    for axis in range(3):
        for sl in (slice(0, -2), slice(2, None)):
            idx = tuple(sl if a == axis else slice(1, -1) for a in range(3))
            full &= padded[idx]
    surface = occ & ~full
    indices = np.argwhere(surface)
    centers = grid.cell_centers(indices)
    if len(indices) < 5:
        return indices, centers, np.zeros((len(indices), 3)), np.zeros(len(indices), bool)

    k = min(10, len(indices) - 1)
    normals, valid = surface_normals(PointCloud(centers), k=k)

    # orient along -grad(occupancy): toward the empty side of the surface
    offsets = np.arange(-1, 2, dtype=np.float32)
    occf = occ.astype(np.float32)
    gradient = np.stack([
        correlate(occf, offsets.reshape([-1 if a == ax else 1 for a in range(3)]),
                  mode="constant")
        for ax in range(3)
    ], axis=-1)
    outward = -gradient[surface]
    strength = np.linalg.norm(outward, axis=1)
    valid = valid & (strength > 1e-9)
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    normals[flip] *= -1.0
    return indices, centers, normals, valid


def sample_shape_completed(partial_cloud: PointCloud, completion: CompletionParams,
                           n: int, seed: int = 0) -> list[GraspCandidate]:
    """n candidates whose approach meets the completed surface within 45 deg."""
    _, completed = build_completion_grid(partial_cloud, completion)
    indices, centers, normals, valid = completed_surface_cells(completed)
    if not valid.any():
        raise SamplerError("degenerate completion: no usable surface cells")
    rng = np.random.default_rng(seed)
    source = _cloud_object(partial_cloud)
    out: list[GraspCandidate] = []
    attempts, budget = 0, n * REJECTION_BUDGET
    while len(out) < n and attempts < budget:
        block = min(_DRAW_BLOCK, budget - attempts)
        attempts += block
        cells = rng.integers(0, len(indices), size=block)
        rots = _rotations_from_gaussians(rng.standard_normal((block, 4)))
        standoffs = rng.uniform(0.0, STANDOFF_MAX, size=block)
        approaches = rots[:, :, 2]
        dots = -np.einsum("ij,ij->i", approaches, normals[cells])
        accept = valid[cells] & (dots > APPROACH_CONE_COS)
        for i in np.flatnonzero(accept):
            if len(out) >= n:
                break
            tcp = centers[cells[i]] - standoffs[i] * approaches[i]
            out.append(GraspCandidate(RigidPose(rots[i], tcp), source,
                                      float(standoffs[i])))
    if len(out) < n:
        raise SamplerError(f"acceptance rate below 1/{REJECTION_BUDGET}: "
                           f"{len(out)}/{n} candidates after {attempts} attempts")
    return out
