"""Row gather and segment reductions used by the graph network.

Rows are node or edge feature vectors; segment ids map each row to a
destination (a node for message aggregation, a graph for pooling).  Segment
counts are small, so scatter ops go through ``np.add.at``.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make


def _check_rows(x: Tensor, ids, num_segments=None):
    ids = np.asarray(ids)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d row tensor, got {x.shape}")
    if ids.ndim != 1:
        raise ShapeError(f"expected 1-d indices, got shape {ids.shape}")
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"indices must be integers, got dtype {ids.dtype}")
    ids = ids.astype(np.intp)
    bound = x.shape[0] if num_segments is None else num_segments
    if ids.size and (ids.min() < 0 or ids.max() >= bound):
        raise ValueError(f"index out of range [0, {bound})")
    return ids


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows x[idx]; duplicate indices accumulate in the gradient."""
    idx = _check_rows(x, idx)

    def backward(grad):
        if x.requires_grad:
            gx = np.zeros(x.shape, dtype=grad.dtype)
            np.add.at(gx, idx, grad)
            x._accumulate(gx)

    return _make(x.data[idx], (x,), backward)


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows into their segments; empty segments yield zero rows."""
    seg = _check_rows(x, segment_ids, num_segments)
    if seg.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} rows but {seg.shape[0]} segment ids")
    out = np.zeros((num_segments, x.shape[1]), dtype=x.dtype)
    np.add.at(out, seg, x.data)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad[seg])

    return _make(out, (x,), backward)


def segment_mean(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Average rows per segment; empty segments yield zero rows."""
    seg = _check_rows(x, segment_ids, num_segments)
    if seg.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} rows but {seg.shape[0]} segment ids")
    counts = np.bincount(seg, minlength=num_segments).astype(x.dtype)
    denom = np.maximum(counts, 1.0)[:, None]
    out = np.zeros((num_segments, x.shape[1]), dtype=x.dtype)
    np.add.at(out, seg, x.data)
    out /= denom

    def backward(grad):
        if x.requires_grad:
            x._accumulate((grad / denom)[seg])

    return _make(out, (x,), backward)


def segment_softmax_aggregate(messages: Tensor, segment_ids, num_segments: int,
                              beta: Tensor) -> Tensor:
    """Per-segment, per-feature softmax-weighted sum of message rows.

    out[s, k] = sum_m softmax_m(beta * msg[m, k]) * msg[m, k] over rows m in
    segment s.  With beta = 0 this is the segment mean; as beta grows it
    approaches the segment max.  beta is a learnable scalar.  Empty segments
    yield zero rows.
    """
    seg = _check_rows(messages, segment_ids, num_segments)
    if seg.shape[0] != messages.shape[0]:
        raise ShapeError(f"{messages.shape[0]} rows but {seg.shape[0]} segment ids")
    if beta.size != 1:
        raise ShapeError(f"beta must be a scalar, got shape {beta.shape}")
    m = messages.data
    n_feat = m.shape[1]
    dtype = np.result_type(m.dtype, beta.dtype)
    b = float(beta.data.reshape(()))
    z = b * m.astype(dtype)
    # stabilize exp with a per-(segment, feature) max
    zmax = np.full((num_segments, n_feat), -np.inf, dtype=dtype)
    if seg.size:
        np.maximum.at(zmax, seg, z)
    e = np.exp(z - zmax[seg]) if seg.size else np.zeros_like(z)
    denom = np.zeros((num_segments, n_feat), dtype=dtype)
    np.add.at(denom, seg, e)
    weights = e / denom[seg] if seg.size else e
    out = np.zeros((num_segments, n_feat), dtype=dtype)
    np.add.at(out, seg, weights * m)

    def backward(grad):
        g_rows = grad[seg]
        if messages.requires_grad:
            gm = g_rows * weights * (1.0 + b * (m - out[seg]))
            messages._accumulate(gm.astype(m.dtype))
        if beta.requires_grad:
            # d out/d beta = E[m^2] - out^2 under the softmax weights
            msq = np.zeros((num_segments, n_feat), dtype=dtype)
            np.add.at(msq, seg, weights * m * m)
            gb = float((grad * (msq - out * out)).sum())
            beta._accumulate(np.full(beta.shape, gb, dtype=beta.dtype))

    return _make(out.astype(m.dtype, copy=False), (messages, beta), backward)
