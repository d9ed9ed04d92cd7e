"""Primitive object shapes as unions of convex pieces.

Every shape lives in a local frame whose origin sits on the table contact
plane (z = 0) under the shape's center, z up.  Pieces supply containment
tests, ray intervals for rendering, analytic-normal surface samples for the
grasp oracle, interior samples for penetration checks, and 2D footprint
polygons for placement.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

SHAPE_KINDS = ("box", "cylinder", "sphere", "triangular_prism", "arch",
               "half_cylinder", "l_block")
NOVEL_SHAPE_KINDS = ("t_block", "plus_block")

SURFACE_SPACING = 0.003
VOLUME_SPACING = 0.004
_DISC_SIDES = 16


def _grid1(lo, hi, spacing):
    n = max(2, int(np.ceil((hi - lo) / spacing)) + 1)
    return np.linspace(lo, hi, n)


def _grid2(lo0, hi0, lo1, hi1, spacing):
    a, b = np.meshgrid(_grid1(lo0, hi0, spacing), _grid1(lo1, hi1, spacing),
                       indexing="ij")
    return a.ravel(), b.ravel()


def _clip_halfspace(t_lo, t_hi, a_dot_o, a_dot_d, b):
    """Intersect ray intervals with the halfspace a.p <= b."""
    moving = np.abs(a_dot_d) > 1e-15
    t_cross = np.where(moving, (b - a_dot_o) / np.where(moving, a_dot_d, 1.0), 0.0)
    entering = moving & (a_dot_d < 0)
    leaving = moving & (a_dot_d > 0)
    t_lo = np.where(entering, np.maximum(t_lo, t_cross), t_lo)
    t_hi = np.where(leaving, np.minimum(t_hi, t_cross), t_hi)
    outside_forever = ~moving & (a_dot_o > b)
    t_hi = np.where(outside_forever, -np.inf, t_hi)
    return t_lo, t_hi


def _clip_quadratic(t_lo, t_hi, qa, qb, qc):
    """Intersect ray intervals with qa t^2 + qb t + qc <= 0 (qa >= 0)."""
    quad = qa > 1e-18
    disc = qb * qb - 4.0 * qa * qc
    ok = quad & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    denom = np.where(quad, 2.0 * qa, 1.0)
    r1 = np.where(ok, (-qb - sq) / denom, 0.0)
    r2 = np.where(ok, (-qb + sq) / denom, 0.0)
    t_lo = np.where(ok, np.maximum(t_lo, r1), t_lo)
    t_hi = np.where(ok, np.minimum(t_hi, r2), t_hi)
    t_hi = np.where(quad & (disc < 0), -np.inf, t_hi)
    # degenerate direction: ray parallel to the extrusion axis
    lin = ~quad & (np.abs(qb) > 1e-15)
    t_cross = np.where(lin, -qc / np.where(lin, qb, 1.0), 0.0)
    t_lo = np.where(lin & (qb < 0), np.maximum(t_lo, t_cross), t_lo)
    t_hi = np.where(lin & (qb > 0), np.minimum(t_hi, t_cross), t_hi)
    t_hi = np.where(~quad & ~lin & (qc > 0), -np.inf, t_hi)
    return t_lo, t_hi


def _rect(x0, x1, y0, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def _regular_polygon(cx, cy, radius, sides=_DISC_SIDES):
    ang = np.linspace(0.0, 2.0 * np.pi, sides, endpoint=False)
    return np.stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)], axis=1)


class Box:
    """Axis-aligned box [lo, hi] in the shape's local frame."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if not np.all(self.hi > self.lo):
            raise ValueError(f"degenerate box {lo}..{hi}")

    def contains(self, pts, tol=0.0):
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=-1)

    def ray_interval(self, origin, dirs):
        t_lo = np.full(dirs.shape[0], -np.inf)
        t_hi = np.full(dirs.shape[0], np.inf)
        for ax in range(3):
            t_lo, t_hi = _clip_halfspace(t_lo, t_hi, -origin[ax], -dirs[:, ax],
                                         -self.lo[ax])
            t_lo, t_hi = _clip_halfspace(t_lo, t_hi, origin[ax], dirs[:, ax],
                                         self.hi[ax])
        return t_lo, t_hi

    def surface_samples(self, spacing):
        pts, nrm = [], []
        lo, hi = self.lo, self.hi
        for ax in range(3):
            o1, o2 = (ax + 1) % 3, (ax + 2) % 3
            a, b = _grid2(lo[o1], hi[o1], lo[o2], hi[o2], spacing)
            for val, sign in ((lo[ax], -1.0), (hi[ax], 1.0)):
                p = np.zeros((a.size, 3))
                p[:, ax] = val
                p[:, o1] = a
                p[:, o2] = b
                n = np.zeros((a.size, 3))
                n[:, ax] = sign
                pts.append(p)
                nrm.append(n)
        return np.concatenate(pts), np.concatenate(nrm)

    def bbox(self):
        return self.lo, self.hi

    def footprint(self):
        return _rect(self.lo[0], self.hi[0], self.lo[1], self.hi[1])


class Sphere:
    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def contains(self, pts, tol=0.0):
        return np.linalg.norm(pts - self.center, axis=-1) <= self.radius + tol

    def ray_interval(self, origin, dirs):
        t_lo = np.full(dirs.shape[0], -np.inf)
        t_hi = np.full(dirs.shape[0], np.inf)
        oc = origin - self.center
        qa = np.einsum("ij,ij->i", dirs, dirs)
        qb = 2.0 * dirs @ oc
        qc = np.full(dirs.shape[0], oc @ oc - self.radius ** 2)
        return _clip_quadratic(t_lo, t_hi, qa, qb, qc)

    def surface_samples(self, spacing):
        n = max(16, int(np.ceil(4.0 * np.pi * self.radius ** 2 / spacing ** 2)))
        i = np.arange(n, dtype=np.float64)
        golden = np.pi * (3.0 - np.sqrt(5.0))
        z = 1.0 - 2.0 * (i + 0.5) / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        theta = golden * i
        nrm = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
        return self.center + self.radius * nrm, nrm

    def bbox(self):
        return self.center - self.radius, self.center + self.radius

    def footprint(self):
        return _regular_polygon(self.center[0], self.center[1], self.radius)


class ZCylinder:
    """Upright cylinder: (x,y) within radius of center_xy, z in [z0, z1]."""

    def __init__(self, center_xy, radius, z0, z1):
        self.center = np.asarray(center_xy, dtype=np.float64)
        self.radius = float(radius)
        self.z0, self.z1 = float(z0), float(z1)

    def contains(self, pts, tol=0.0):
        radial = np.linalg.norm(pts[..., :2] - self.center, axis=-1)
        return ((radial <= self.radius + tol) & (pts[..., 2] >= self.z0 - tol)
                & (pts[..., 2] <= self.z1 + tol))

    def ray_interval(self, origin, dirs):
        t_lo = np.full(dirs.shape[0], -np.inf)
        t_hi = np.full(dirs.shape[0], np.inf)
        oc = origin[:2] - self.center
        qa = np.einsum("ij,ij->i", dirs[:, :2], dirs[:, :2])
        qb = 2.0 * dirs[:, :2] @ oc
        qc = np.full(dirs.shape[0], oc @ oc - self.radius ** 2)
        t_lo, t_hi = _clip_quadratic(t_lo, t_hi, qa, qb, qc)
        t_lo, t_hi = _clip_halfspace(t_lo, t_hi, -origin[2], -dirs[:, 2], -self.z0)
        t_lo, t_hi = _clip_halfspace(t_lo, t_hi, origin[2], dirs[:, 2], self.z1)
        return t_lo, t_hi

    def surface_samples(self, spacing):
        pts, nrm = [], []
        n_ang = max(8, int(np.ceil(2.0 * np.pi * self.radius / spacing)))
        ang = np.linspace(0.0, 2.0 * np.pi, n_ang, endpoint=False)
        zs = _grid1(self.z0, self.z1, spacing)
        a, z = np.meshgrid(ang, zs, indexing="ij")
        side_n = np.stack([np.cos(a.ravel()), np.sin(a.ravel()),
                           np.zeros(a.size)], axis=1)
        side_p = side_n * self.radius
        side_p[:, 0] += self.center[0]
        side_p[:, 1] += self.center[1]
        side_p[:, 2] = z.ravel()
        pts.append(side_p)
        nrm.append(side_n)
        x, y = _grid2(-self.radius, self.radius, -self.radius, self.radius, spacing)
        inside = x * x + y * y <= self.radius ** 2
        x, y = x[inside], y[inside]
        for zv, sign in ((self.z0, -1.0), (self.z1, 1.0)):
            cap = np.stack([x + self.center[0], y + self.center[1],
                            np.full(x.size, zv)], axis=1)
            n = np.zeros((x.size, 3))
            n[:, 2] = sign
            pts.append(cap)
            nrm.append(n)
        return np.concatenate(pts), np.concatenate(nrm)

    def bbox(self):
        lo = np.array([self.center[0] - self.radius, self.center[1] - self.radius,
                       self.z0])
        hi = np.array([self.center[0] + self.radius, self.center[1] + self.radius,
                       self.z1])
        return lo, hi

    def footprint(self):
        return _regular_polygon(self.center[0], self.center[1], self.radius)


class HalfCylinderY:
    """Half-cylinder resting on its flat face: x^2 + z^2 <= r^2, z >= 0, y caps."""

    def __init__(self, radius, y0, y1):
        self.radius = float(radius)
        self.y0, self.y1 = float(y0), float(y1)

    def contains(self, pts, tol=0.0):
        radial = np.sqrt(pts[..., 0] ** 2 + pts[..., 2] ** 2)
        return ((radial <= self.radius + tol) & (pts[..., 2] >= -tol)
                & (pts[..., 1] >= self.y0 - tol) & (pts[..., 1] <= self.y1 + tol))

    def ray_interval(self, origin, dirs):
        t_lo = np.full(dirs.shape[0], -np.inf)
        t_hi = np.full(dirs.shape[0], np.inf)
        qa = dirs[:, 0] ** 2 + dirs[:, 2] ** 2
        qb = 2.0 * (origin[0] * dirs[:, 0] + origin[2] * dirs[:, 2])
        qc = np.full(dirs.shape[0], origin[0] ** 2 + origin[2] ** 2
                     - self.radius ** 2)
        t_lo, t_hi = _clip_quadratic(t_lo, t_hi, qa, qb, qc)
        t_lo, t_hi = _clip_halfspace(t_lo, t_hi, -origin[2], -dirs[:, 2], 0.0)
        t_lo, t_hi = _clip_halfspace(t_lo, t_hi, -origin[1], -dirs[:, 1], -self.y0)
        t_lo, t_hi = _clip_halfspace(t_lo, t_hi, origin[1], dirs[:, 1], self.y1)
        return t_lo, t_hi

    def surface_samples(self, spacing):
        pts, nrm = [], []
        n_ang = max(6, int(np.ceil(np.pi * self.radius / spacing)))
        ang = np.linspace(0.0, np.pi, n_ang)
        ys = _grid1(self.y0, self.y1, spacing)
        a, y = np.meshgrid(ang, ys, indexing="ij")
        curved_n = np.stack([np.cos(a.ravel()), np.zeros(a.size),
                             np.sin(a.ravel())], axis=1)
        curved_p = np.stack([self.radius * np.cos(a.ravel()), y.ravel(),
                             self.radius * np.sin(a.ravel())], axis=1)
        pts.append(curved_p)
        nrm.append(curved_n)
        x, y = _grid2(-self.radius, self.radius, self.y0, self.y1, spacing)
        bottom = np.stack([x, y, np.zeros(x.size)], axis=1)
        n = np.zeros((x.size, 3))
        n[:, 2] = -1.0
        pts.append(bottom)
        nrm.append(n)
        x, z = _grid2(-self.radius, self.radius, 0.0, self.radius, spacing)
        inside = x * x + z * z <= self.radius ** 2
        x, z = x[inside], z[inside]
        for yv, sign in ((self.y0, -1.0), (self.y1, 1.0)):
            cap = np.stack([x, np.full(x.size, yv), z], axis=1)
            n = np.zeros((x.size, 3))
            n[:, 1] = sign
            pts.append(cap)
            nrm.append(n)
        return np.concatenate(pts), np.concatenate(nrm)

    def bbox(self):
        return (np.array([-self.radius, self.y0, 0.0]),
                np.array([self.radius, self.y1, self.radius]))

    def footprint(self):
        return _rect(-self.radius, self.radius, self.y0, self.y1)


class PrismY:
    """Convex polygon in the (x, z) plane extruded along y."""

    def __init__(self, poly_xz, y0, y1):
        self.poly = np.asarray(poly_xz, dtype=np.float64)
        self.y0, self.y1 = float(y0), float(y1)
        # outward edge normals of the CCW cross-section
        rolled = np.roll(self.poly, -1, axis=0)
        edges = rolled - self.poly
        self.edge_normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        self.edge_normals /= np.linalg.norm(self.edge_normals, axis=1, keepdims=True)
        self.edge_offsets = np.einsum("ij,ij->i", self.edge_normals, self.poly)

    def contains(self, pts, tol=0.0):
        xz = pts[..., [0, 2]]
        inside_poly = np.all(xz @ self.edge_normals.T
                             <= self.edge_offsets + tol, axis=-1)
        return (inside_poly & (pts[..., 1] >= self.y0 - tol)
                & (pts[..., 1] <= self.y1 + tol))

    def ray_interval(self, origin, dirs):
        t_lo = np.full(dirs.shape[0], -np.inf)
        t_hi = np.full(dirs.shape[0], np.inf)
        o_xz = origin[[0, 2]]
        d_xz = dirs[:, [0, 2]]
        for n, b in zip(self.edge_normals, self.edge_offsets):
            t_lo, t_hi = _clip_halfspace(t_lo, t_hi, float(n @ o_xz), d_xz @ n, b)
        t_lo, t_hi = _clip_halfspace(t_lo, t_hi, -origin[1], -dirs[:, 1], -self.y0)
        t_lo, t_hi = _clip_halfspace(t_lo, t_hi, origin[1], dirs[:, 1], self.y1)
        return t_lo, t_hi

    def surface_samples(self, spacing):
        pts, nrm = [], []
        rolled = np.roll(self.poly, -1, axis=0)
        ys = _grid1(self.y0, self.y1, spacing)
        for (p0, p1, n) in zip(self.poly, rolled, self.edge_normals):
            length = np.linalg.norm(p1 - p0)
            ss = np.linspace(0.0, 1.0, max(2, int(np.ceil(length / spacing)) + 1))
            s, y = np.meshgrid(ss, ys, indexing="ij")
            edge_pts = p0 + s.ravel()[:, None] * (p1 - p0)
            face = np.stack([edge_pts[:, 0], y.ravel(), edge_pts[:, 1]], axis=1)
            normals = np.tile([n[0], 0.0, n[1]], (face.shape[0], 1))
            pts.append(face)
            nrm.append(normals)
        lo_x, hi_x = self.poly[:, 0].min(), self.poly[:, 0].max()
        lo_z, hi_z = self.poly[:, 1].min(), self.poly[:, 1].max()
        x, z = _grid2(lo_x, hi_x, lo_z, hi_z, spacing)
        xz = np.stack([x, z], axis=1)
        inside = np.all(xz @ self.edge_normals.T <= self.edge_offsets + 1e-12, axis=1)
        x, z = x[inside], z[inside]
        for yv, sign in ((self.y0, -1.0), (self.y1, 1.0)):
            cap = np.stack([x, np.full(x.size, yv), z], axis=1)
            n = np.zeros((x.size, 3))
            n[:, 1] = sign
            pts.append(cap)
            nrm.append(n)
        return np.concatenate(pts), np.concatenate(nrm)

    def bbox(self):
        return (np.array([self.poly[:, 0].min(), self.y0, self.poly[:, 1].min()]),
                np.array([self.poly[:, 0].max(), self.y1, self.poly[:, 1].max()]))

    def footprint(self):
        return _rect(self.poly[:, 0].min(), self.poly[:, 0].max(), self.y0, self.y1)


class ShapeModel:
    """A shape kind with concrete dimensions: a union of convex pieces."""

    def __init__(self, kind, dimensions, pieces):
        self.kind = kind
        self.dimensions = dict(dimensions)
        self.pieces = pieces
        self._surface = None
        self._volume = None

    def contains(self, pts, tol=0.0):
        pts = np.asarray(pts, dtype=np.float64)
        inside = np.zeros(pts.shape[:-1], dtype=bool)
        for piece in self.pieces:
            inside |= piece.contains(pts, tol)
        return inside

    def ray_hits(self, origin, dirs):
        """First-hit parameter per ray (inf for misses)."""
        best = np.full(dirs.shape[0], np.inf)
        for piece in self.pieces:
            t_lo, t_hi = piece.ray_interval(origin, dirs)
            hit = (t_lo <= t_hi) & (t_hi > 1e-9)
            t = np.where(t_lo > 1e-9, t_lo, np.inf)   # ignore hits behind the camera
            best = np.where(hit, np.minimum(best, t), best)
        return best

    def surface_points(self):
        """Union surface samples with outward analytic normals, cached."""
        if self._surface is None:
            all_pts, all_nrm = [], []
            for i, piece in enumerate(self.pieces):
                pts, nrm = piece.surface_samples(SURFACE_SPACING)
                keep = np.ones(pts.shape[0], dtype=bool)
                for j, other in enumerate(self.pieces):
                    if i != j:
                        keep &= ~other.contains(pts, tol=-1e-9)
                all_pts.append(pts[keep])
                all_nrm.append(nrm[keep])
            self._surface = (np.concatenate(all_pts), np.concatenate(all_nrm))
        return self._surface

    def volume_points(self):
        """Interior grid samples (includes boundary cells), cached."""
        if self._volume is None:
            lo = np.min([p.bbox()[0] for p in self.pieces], axis=0)
            hi = np.max([p.bbox()[1] for p in self.pieces], axis=0)
            xs = _grid1(lo[0], hi[0], VOLUME_SPACING)
            ys = _grid1(lo[1], hi[1], VOLUME_SPACING)
            zs = _grid1(lo[2], hi[2], VOLUME_SPACING)
            g = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
            self._volume = g[self.contains(g)]
        return self._volume

    def footprints(self):
        return [p.footprint() for p in self.pieces]

    @property
    def height(self):
        return max(float(p.bbox()[1][2]) for p in self.pieces)

    @property
    def max_radius(self):
        """Largest horizontal distance from the local origin to any footprint vertex."""
        return max(float(np.linalg.norm(poly, axis=1).max())
                   for poly in self.footprints())


def _build_pieces(kind, d):
    w = d.get("width", 0.0)
    dep = d.get("depth", 0.0)
    h = d.get("height", 0.0)
    r = d.get("radius", 0.0)
    if kind == "box":
        return [Box([-w / 2, -dep / 2, 0.0], [w / 2, dep / 2, h])]
    if kind == "cylinder":
        return [ZCylinder([0.0, 0.0], r, 0.0, h)]
    if kind == "sphere":
        return [Sphere([0.0, 0.0, r], r)]
    if kind == "triangular_prism":
        poly = [[-w / 2, 0.0], [w / 2, 0.0], [0.0, h]]
        return [PrismY(poly, -dep / 2, dep / 2)]
    if kind == "arch":
        leg = 0.3 * w
        lintel = 0.35 * h
        return [Box([-w / 2, -dep / 2, 0.0], [-w / 2 + leg, dep / 2, h]),
                Box([w / 2 - leg, -dep / 2, 0.0], [w / 2, dep / 2, h]),
                Box([-w / 2, -dep / 2, h - lintel], [w / 2, dep / 2, h])]
    if kind == "half_cylinder":
        return [HalfCylinderY(r, -dep / 2, dep / 2)]
    if kind == "l_block":
        upright = 0.4 * w
        foot = 0.4 * h
        return [Box([-w / 2, -dep / 2, 0.0], [-w / 2 + upright, dep / 2, h]),
                Box([-w / 2, -dep / 2, 0.0], [w / 2, dep / 2, foot])]
    if kind == "t_block":
        stem = 0.4 * w
        bar = 0.4 * h
        return [Box([-stem / 2, -dep / 2, 0.0], [stem / 2, dep / 2, h]),
                Box([-w / 2, -dep / 2, h - bar], [w / 2, dep / 2, h])]
    if kind == "plus_block":
        stem = 0.3 * w
        bar = 0.3 * h
        return [Box([-stem / 2, -dep / 2, 0.0], [stem / 2, dep / 2, h]),
                Box([-w / 2, -dep / 2, 0.5 * h - bar], [w / 2, dep / 2, 0.5 * h + bar])]
    raise ValueError(f"unknown shape kind {kind!r}")


@lru_cache(maxsize=512)
def _cached_shape(kind, dim_items):
    return ShapeModel(kind, dict(dim_items), _build_pieces(kind, dict(dim_items)))


def make_shape(kind, dimensions) -> ShapeModel:
    """Build (or fetch the cached) geometry for a shape kind and dimensions."""
    items = tuple(sorted((k, float(v)) for k, v in dimensions.items()))
    for _, v in items:
        if v <= 0:
            raise ValueError(f"non-positive dimension in {dimensions}")
    return _cached_shape(kind, items)


def random_dimensions(kind, rng, lo=0.03, hi=0.055) -> dict:
    """Draw shape dimensions uniformly in [lo, hi] per characteristic length."""
    def u():
        return float(rng.uniform(lo, hi))

    if kind == "box":
        return {"width": u(), "depth": u(), "height": u()}
    if kind == "cylinder":
        return {"radius": u() / 2, "height": u()}
    if kind == "sphere":
        return {"radius": u() / 2}
    if kind == "triangular_prism":
        return {"width": u(), "depth": u(), "height": u()}
    if kind == "arch":
        return {"width": 1.3 * u(), "depth": u(), "height": u()}
    if kind == "half_cylinder":
        return {"radius": u() / 2, "depth": u()}
    if kind in ("l_block", "t_block", "plus_block"):
        return {"width": 1.2 * u(), "depth": u(), "height": 1.2 * u()}
    raise ValueError(f"unknown shape kind {kind!r}")
