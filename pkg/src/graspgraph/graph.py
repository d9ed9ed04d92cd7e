"""Grasp graphs: scene objects expressed relative to one grasp candidate.

A grasp graph has one node per object surviving the workspace crop around the
grasp point.  Node features are voxel-encoder codes of each object's geometry
in the grasp frame; directed edges between every ordered pair carry the
centroid displacement d_ij, its length z_ij, and an MLP embedding of both.
Because positions are expressed in the grasp frame, the candidate pose itself
is encoded in the geometry and needs no separate input channel.
"""

from __future__ import annotations

import base64
import json
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .geometry import WORKSPACE_EXTENT, PointCloud, RigidPose, crop_workspace, \
    to_grasp_frame, voxelize
from .models import EncoderParams, FEATURE_DIM, _check_shapes, _FastEncoder
from .nn import ShapeError, Tensor, linear, load_checkpoint, relu, \
    save_checkpoint, uniform_init

EDGE_ATTR_DIM = 4      # concat(d_ij, z_ij)
EDGE_HIDDEN = 64

EDGE_ENCODER_SHAPES = OrderedDict([
    ("edge_enc.w1", (EDGE_HIDDEN, EDGE_ATTR_DIM)),
    ("edge_enc.b1", (EDGE_HIDDEN,)),
    ("edge_enc.w2", (FEATURE_DIM, EDGE_HIDDEN)),
    ("edge_enc.b2", (FEATURE_DIM,)),
])
_EDGE_ATTRS = ("w1", "b1", "w2", "b2")


@dataclass
class EdgeEncoderParams:
    """Two-layer MLP mapping edge attributes (d_ij, z_ij) to edge features."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __post_init__(self):
        _check_shapes(self, _EDGE_ATTRS, EDGE_ENCODER_SHAPES)

    @classmethod
    def init(cls, rng: np.random.Generator) -> "EdgeEncoderParams":
        def weight(shape, fan_in):
            return Tensor(uniform_init(rng, shape, fan_in), requires_grad=True)

        return cls(
            weight((EDGE_HIDDEN, EDGE_ATTR_DIM), EDGE_ATTR_DIM),
            weight((EDGE_HIDDEN,), EDGE_ATTR_DIM),
            weight((FEATURE_DIM, EDGE_HIDDEN), EDGE_HIDDEN),
            weight((FEATURE_DIM,), EDGE_HIDDEN),
        )

    def tensors(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(zip(EDGE_ENCODER_SHAPES,
                               (getattr(self, a) for a in _EDGE_ATTRS)))

    @classmethod
    def from_tensors(cls, tensors) -> "EdgeEncoderParams":
        missing = [n for n in EDGE_ENCODER_SHAPES if n not in tensors]
        if missing:
            raise KeyError(f"checkpoint missing tensors {missing}")
        args = [tensors[n] for n in EDGE_ENCODER_SHAPES]
        return cls(*[a if isinstance(a, Tensor) else Tensor(a, requires_grad=True)
                     for a in args])


def save_edge_encoder(path, params: EdgeEncoderParams) -> None:
    save_checkpoint(path, params.tensors())


def load_edge_encoder(path) -> EdgeEncoderParams:
    return EdgeEncoderParams.from_tensors(load_checkpoint(path))


@dataclass(frozen=True)
class GraspGraph:
    """Fully connected directed graph over the objects near one grasp.

    ``object_ids`` and ``centroids`` are bookkeeping extras: they identify
    which scene object each node came from and where it sits in the grasp
    frame.  Message passing consumes only features, edges, and attributes.
    """

    node_features: np.ndarray   # (N, 128) float32
    edge_list: np.ndarray       # (E, 2) int64 ordered pairs (i, j)
    edge_attrs: np.ndarray      # (E, 4) float32 rows (d_ij, z_ij)
    edge_features: np.ndarray   # (E, 128) float32
    centroids: np.ndarray       # (N, 3) float64, grasp frame
    object_ids: np.ndarray      # (N,) int64

    def __post_init__(self):
        n, e = len(self.node_features), len(self.edge_list)
        if self.node_features.ndim != 2 or self.node_features.shape[1] != FEATURE_DIM:
            raise ShapeError(f"node features must be (N, {FEATURE_DIM}), "
                             f"got {self.node_features.shape}")
        if self.edge_list.shape != (e, 2) or self.edge_attrs.shape != (e, 4) \
                or self.edge_features.shape != (e, FEATURE_DIM):
            raise ShapeError("edge arrays disagree on edge count")
        if self.centroids.shape != (n, 3) or self.object_ids.shape != (n,):
            raise ShapeError("per-node arrays disagree on node count")
        if e != n * (n - 1):
            raise ValueError(f"{n} nodes require {n * (n - 1)} edges, got {e}")
        if e:
            i, j = self.edge_list[:, 0], self.edge_list[:, 1]
            if (i == j).any():
                raise ValueError("self-loops are not allowed")
            if i.min() < 0 or max(i.max(), j.max()) >= n:
                raise ValueError("edge endpoint out of range")
            if len({(int(a), int(b)) for a, b in self.edge_list}) != e:
                raise ValueError("duplicate edges")
            z = np.linalg.norm(self.edge_attrs[:, :3], axis=1)
            if not np.allclose(self.edge_attrs[:, 3], z, atol=1e-6):
                raise ValueError("edge distance does not match |d_ij|")

    @property
    def num_nodes(self) -> int:
        return len(self.node_features)

    @property
    def is_empty(self) -> bool:
        return self.num_nodes == 0


def empty_graph() -> GraspGraph:
    """The zero-object graph; downstream scoring maps it to p_g = 0."""
    return GraspGraph(
        np.zeros((0, FEATURE_DIM), np.float32), np.zeros((0, 2), np.int64),
        np.zeros((0, 4), np.float32), np.zeros((0, FEATURE_DIM), np.float32),
        np.zeros((0, 3)), np.zeros(0, np.int64))


def edge_attributes(centroid_i, centroid_j):
    """Displacement from node i to node j and its Euclidean length."""
    d = np.asarray(centroid_j, dtype=np.float64) - np.asarray(centroid_i,
                                                              dtype=np.float64)
    return d, float(np.linalg.norm(d))


def complete_edge_attrs(centroids: np.ndarray):
    """Ordered-pair edge list and (d_ij, z_ij) rows for full connectivity."""
    n = len(centroids)
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    d = centroids[jj] - centroids[ii]
    z = np.linalg.norm(d, axis=1)
    return (np.column_stack([ii, jj]).astype(np.int64),
            np.column_stack([d, z]).astype(np.float32))


def encode_edge_attrs(attrs: np.ndarray, params: EdgeEncoderParams) -> np.ndarray:
    """Edge features y_ij from attribute rows, shape (E, 4) -> (E, 128)."""
    attrs = np.asarray(attrs, dtype=np.float32)
    if attrs.ndim != 2 or attrs.shape[1] != EDGE_ATTR_DIM:
        raise ShapeError(f"expected (E, {EDGE_ATTR_DIM}) attrs, got {attrs.shape}")
    if len(attrs) == 0:
        return np.zeros((0, FEATURE_DIM), np.float32)
    h = relu(linear(Tensor(attrs, requires_grad=False), params.w1, params.b1))
    return linear(h, params.w2, params.b2).data.copy()


def _as_object_map(object_clouds) -> "dict[int, PointCloud]":
    if isinstance(object_clouds, PointCloud):
        if object_clouds.object_ids is None:
            raise ValueError("cloud must carry per-point object ids")
        return {int(oid): PointCloud(object_clouds.points[sel], None)
                for oid in np.unique(object_clouds.object_ids)
                for sel in [object_clouds.object_ids == oid]}
    return {int(oid): cloud for oid, cloud in dict(object_clouds).items()}


def _merged_cloud(object_clouds) -> PointCloud:
    clouds = _as_object_map(object_clouds)
    if not clouds:
        raise ValueError("need at least one object cloud")
    points = np.vstack([c.points for c in clouds.values()])
    ids = np.concatenate([np.full(len(c), oid, dtype=np.int64)
                          for oid, c in clouds.items()])
    return PointCloud(points, ids)


def _build_one(merged: PointCloud, grasp: RigidPose, fast: _FastEncoder,
               edge_enc: EdgeEncoderParams) -> GraspGraph:
    surviving = crop_workspace(to_grasp_frame(merged, grasp), WORKSPACE_EXTENT)
    if not surviving:
        return empty_graph()
    oids = sorted(surviving)
    origin = np.full(3, -WORKSPACE_EXTENT / 2.0)
    features = np.stack([
        fast.encode_one(voxelize(surviving[o], WORKSPACE_EXTENT, origin).occupancy)
        for o in oids]).astype(np.float32)
    centroids = np.stack([surviving[o].points.mean(axis=0) for o in oids])
    edge_list, attrs = complete_edge_attrs(centroids)
    edge_features = encode_edge_attrs(attrs, edge_enc)
    return GraspGraph(features, edge_list, attrs, edge_features, centroids,
                      np.asarray(oids, dtype=np.int64))


def build_grasp_graph(object_clouds, grasp: RigidPose, encoder: EncoderParams,
                      edge_enc: EdgeEncoderParams) -> GraspGraph:
    """Build the graph for one candidate from world-frame object clouds.

    Transforms every cloud into the grasp frame, crops to the workspace cube
    around the tool center point, drops objects with no points left,
    voxelizes each survivor over the shared cube, and encodes nodes and
    edges.  ``object_clouds`` is a {object_id: PointCloud} mapping or one
    cloud with per-point ids.  Zero survivors yield the empty graph.
    """
    return _build_one(_merged_cloud(object_clouds), grasp,
                      _FastEncoder(encoder), edge_enc)


def build_grasp_graphs(object_clouds, grasps, encoder: EncoderParams,
                       edge_enc: EdgeEncoderParams) -> "list[GraspGraph]":
    """Graphs for many candidate poses over one observation."""
    merged = _merged_cloud(object_clouds)
    fast = _FastEncoder(encoder)
    return [_build_one(merged, g, fast, edge_enc) for g in grasps]


def _pack(array: np.ndarray, dtype: str) -> dict:
    data = np.ascontiguousarray(array.astype(np.dtype(dtype), copy=False))
    return {"shape": list(array.shape), "dtype": dtype,
            "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _unpack(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype=np.dtype(blob["dtype"])).reshape(
        blob["shape"]).copy()


def graph_to_dict(graph: GraspGraph) -> dict:
    """JSON-ready form; feature arrays as base64 little-endian 32-bit reals."""
    return {
        "node_features": _pack(graph.node_features, "<f4"),
        "edge_list": graph.edge_list.tolist(),
        "edge_attrs": _pack(graph.edge_attrs, "<f4"),
        "edge_features": _pack(graph.edge_features, "<f4"),
        "centroids": _pack(graph.centroids, "<f8"),
        "object_ids": graph.object_ids.tolist(),
    }


def graph_from_dict(blob: dict) -> GraspGraph:
    return GraspGraph(
        _unpack(blob["node_features"]),
        np.asarray(blob["edge_list"], dtype=np.int64).reshape(-1, 2),
        _unpack(blob["edge_attrs"]),
        _unpack(blob["edge_features"]),
        _unpack(blob["centroids"]),
        np.asarray(blob["object_ids"], dtype=np.int64).reshape(-1),
    )


def save_graphs(path, graphs) -> None:
    """Write graphs as one JSON document (dataset cache)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([graph_to_dict(g) for g in graphs], fh)


def load_graphs(path) -> "list[GraspGraph]":
    with open(path, encoding="utf-8") as fh:
        return [graph_from_dict(b) for b in json.load(fh)]
