"""Single-view depth rendering with ground-truth instance masks.

Rays are cast through pixel centers with unnormalized camera-frame directions
((u-cx)/fx, (v-cy)/fy, 1), so the ray parameter at a hit equals the z-depth
directly.  Nearest hit wins; the mask stores object index + 1 (0 background).
The table itself is not rendered: depth 0 marks "no object".
"""

from __future__ import annotations

import numpy as np

from .scene import Scene


def render_depth(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Render (depth meters float32, instance mask uint16), each (height, width)."""
    cam = scene.camera
    u, v = np.meshgrid(np.arange(cam.width), np.arange(cam.height), indexing="xy")
    dirs_cam = np.stack([(u.ravel() - cam.cx) / cam.fx,
                         (v.ravel() - cam.cy) / cam.fy,
                         np.ones(u.size)], axis=1)
    best_t = np.full(u.size, np.inf)
    mask = np.zeros(u.size, dtype=np.uint16)
    for index, obj in enumerate(scene.objects):
        # express rays in the object's local frame; the yaw/translation map
        # preserves the ray parameter, so t stays a camera z-depth
        local = obj.pose.inverse().compose(cam.pose)
        origin = local.translation
        dirs = dirs_cam @ local.rotation.T
        t = obj.shape.ray_hits(origin, dirs)
        closer = t < best_t
        best_t[closer] = t[closer]
        mask[closer] = index + 1
    depth = np.where(np.isfinite(best_t), best_t, 0.0).astype(np.float32)
    return (depth.reshape(cam.height, cam.width),
            mask.reshape(cam.height, cam.width))
