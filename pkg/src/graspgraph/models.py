"""Voxel-grid feature encoder and shape-completion autoencoder.

One architecture serves two roles.  The encoder half maps a 32-cube occupancy
grid to a 128-d geometric feature used as a graph node embedding.  The full
autoencoder, trained to reconstruct partial grids or to regress complete
ground-truth grids from partial ones, provides the shape-completion module
used during grasp sampling.

Encoder: Conv3D(1,32,5) > ELU > Maxpool(2) > Conv3D(32,32,3) > ELU >
Maxpool(2) > FC(6912,128).  Decoder: ReLU > FC(128,6912) > Maxunpool(2) >
ConvTranspose3D(32,32,3) > Maxunpool(2) > ConvTranspose3D(32,1,5), with the
unpool stages reusing the encoder's pooling indices.  Spatial chain
32>28>14>12>6 down and the mirror back up.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .geometry import GRID_RESOLUTION, VoxelGrid
from .nn.conv import conv3d_forward
from .nn import (
    AdamState,
    ShapeError,
    Tensor,
    adam_step,
    bce_loss,
    conv3d,
    conv_transpose3d,
    elu,
    linear,
    load_checkpoint,
    maxpool3d,
    maxunpool3d,
    relu,
    save_checkpoint,
    sigmoid,
    uniform_init,
    zero_grads,
)

FEATURE_DIM = 128
_FLAT = 32 * 6 * 6 * 6     # channels x spatial cells entering the bottleneck

ENCODER_SHAPES = OrderedDict([
    ("enc.conv1.w", (32, 1, 5, 5, 5)),
    ("enc.conv1.b", (32,)),
    ("enc.conv2.w", (32, 32, 3, 3, 3)),
    ("enc.conv2.b", (32,)),
    ("enc.fc.w", (FEATURE_DIM, _FLAT)),
    ("enc.fc.b", (FEATURE_DIM,)),
])
DECODER_SHAPES = OrderedDict([
    ("dec.fc2.w", (_FLAT, FEATURE_DIM)),
    ("dec.fc2.b", (_FLAT,)),
    ("dec.deconv1.w", (32, 32, 3, 3, 3)),
    ("dec.deconv1.b", (32,)),
    ("dec.deconv2.w", (32, 1, 5, 5, 5)),
    ("dec.deconv2.b", (1,)),
])

_ENC_ATTRS = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")
_DEC_ATTRS = ("fc2_w", "fc2_b", "deconv1_w", "deconv1_b", "deconv2_w", "deconv2_b")


def _weight(rng, shape, fan_in) -> Tensor:
    return Tensor(uniform_init(rng, shape, fan_in), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def _check_shapes(obj, attrs, table):
    for attr, (name, shape) in zip(attrs, table.items()):
        got = getattr(obj, attr)
        if not isinstance(got, Tensor):
            raise TypeError(f"{name} must be a Tensor")
        if got.shape != shape:
            raise ShapeError(f"{name} has shape {got.shape}, expected {shape}")


@dataclass
class EncoderParams:
    """Weights of the voxel-feature encoder half."""

    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    fc_w: Tensor
    fc_b: Tensor

    def __post_init__(self):
        _check_shapes(self, _ENC_ATTRS, ENCODER_SHAPES)

    @classmethod
    def init(cls, rng: np.random.Generator) -> "EncoderParams":
        return cls(
            _weight(rng, (32, 1, 5, 5, 5), 1 * 5 ** 3), _zeros(32),
            _weight(rng, (32, 32, 3, 3, 3), 32 * 3 ** 3), _zeros(32),
            _weight(rng, (FEATURE_DIM, _FLAT), _FLAT), _zeros(FEATURE_DIM),
        )

    def tensors(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(zip(ENCODER_SHAPES, (getattr(self, a) for a in _ENC_ATTRS)))

    @classmethod
    def from_tensors(cls, tensors) -> "EncoderParams":
        missing = [n for n in ENCODER_SHAPES if n not in tensors]
        if missing:
            raise KeyError(f"checkpoint missing tensors {missing}")
        args = [tensors[n] for n in ENCODER_SHAPES]
        return cls(*[a if isinstance(a, Tensor) else Tensor(a, requires_grad=True)
                     for a in args])


@dataclass
class CompletionParams:
    """Full autoencoder weights: encoder plus mirrored decoder."""

    encoder: EncoderParams
    fc2_w: Tensor
    fc2_b: Tensor
    deconv1_w: Tensor
    deconv1_b: Tensor
    deconv2_w: Tensor
    deconv2_b: Tensor

    def __post_init__(self):
        _check_shapes(self, _DEC_ATTRS, DECODER_SHAPES)

    @classmethod
    def init(cls, rng: np.random.Generator) -> "CompletionParams":
        encoder = EncoderParams.init(rng)
        return cls(
            encoder,
            _weight(rng, (_FLAT, FEATURE_DIM), FEATURE_DIM), _zeros(_FLAT),
            _weight(rng, (32, 32, 3, 3, 3), 32 * 3 ** 3), _zeros(32),
            _weight(rng, (32, 1, 5, 5, 5), 32 * 5 ** 3), _zeros(1),
        )

    def tensors(self) -> "OrderedDict[str, Tensor]":
        out = self.encoder.tensors()
        out.update(zip(DECODER_SHAPES, (getattr(self, a) for a in _DEC_ATTRS)))
        return out

    @classmethod
    def from_tensors(cls, tensors) -> "CompletionParams":
        missing = [n for n in DECODER_SHAPES if n not in tensors]
        if missing:
            raise KeyError(f"checkpoint missing tensors {missing}")
        args = [tensors[n] for n in DECODER_SHAPES]
        args = [a if isinstance(a, Tensor) else Tensor(a, requires_grad=True)
                for a in args]
        return cls(EncoderParams.from_tensors(tensors), *args)


def save_params(path, params) -> None:
    """Write encoder or completion weights in the checkpoint format."""
    save_checkpoint(path, params.tensors())


def load_encoder(path) -> EncoderParams:
    return EncoderParams.from_tensors(load_checkpoint(path))


def load_completion(path) -> CompletionParams:
    return CompletionParams.from_tensors(load_checkpoint(path))


def _encode_features(x: Tensor, params: EncoderParams):
    """Batched encoder forward; returns (code, pool indices outer, inner)."""
    h = elu(conv3d(x, params.conv1_w, params.conv1_b))
    h, idx1 = maxpool3d(h)
    h = elu(conv3d(h, params.conv2_w, params.conv2_b))
    h, idx2 = maxpool3d(h)
    flat = h.reshape((h.shape[0], _FLAT))
    return linear(flat, params.fc_w, params.fc_b), idx1, idx2


def _decode_logits(code: Tensor, idx1, idx2, params: CompletionParams) -> Tensor:
    h = linear(relu(code), params.fc2_w, params.fc2_b)
    h = h.reshape((h.shape[0], 32, 6, 6, 6))
    h = maxunpool3d(h, idx2)
    h = conv_transpose3d(h, params.deconv1_w, params.deconv1_b)
    h = maxunpool3d(h, idx1)
    return conv_transpose3d(h, params.deconv2_w, params.deconv2_b)


def _grid_array(grid) -> np.ndarray:
    occ = grid.occupancy if isinstance(grid, VoxelGrid) else np.asarray(grid)
    if occ.shape != (GRID_RESOLUTION,) * 3:
        raise ShapeError(f"expected a {GRID_RESOLUTION}-cube grid, got {occ.shape}")
    return occ.astype(np.float32)


def encode(grid, params: EncoderParams) -> np.ndarray:
    """128-d geometric feature of one occupancy grid."""
    return encode_batch(_grid_array(grid)[None], params)[0]


def _elu_(x: np.ndarray) -> np.ndarray:
    """In-place ELU; expm1 touches only the negative entries."""
    neg = x < 0
    x[neg] = np.expm1(x[neg])
    return x


def _pool_last(x: np.ndarray) -> np.ndarray:
    """2x2x2 max pool of a channels-last block (even spatial dims)."""
    s0, s1, s2, c = x.shape
    y = x.reshape(s0 // 2, 2, s1 // 2, 2, s2 // 2, 2, c)
    return y.max(axis=5).max(axis=3).max(axis=1)


class _FastEncoder:
    """Inference forward of the voxel encoder, restricted to the occupied
    bounding box of each grid.

    Voxelized surface clouds fill well under 1% of the cube, so outside the
    occupied region every layer's activation is a per-channel background
    constant (zero convolution response pushed through bias, ELU, and pool).
    Only the box around the occupied cells is computed densely: conv1 as a
    sparse matrix product over kernel offsets, conv2 as an im2col matmul on
    the box.  Matches the autodiff forward to float32 rounding.
    """

    def __init__(self, params: EncoderParams):
        k1 = params.conv1_w.shape[2]
        self.k1 = k1
        self.side1 = GRID_RESOLUTION - k1 + 1                   # conv1 output side
        r = np.arange(k1)
        self.offsets = np.stack(np.meshgrid(r, r, r, indexing="ij"),
                                axis=-1).reshape(-1, 3)
        self.w1mat = np.ascontiguousarray(
            params.conv1_w.data[:, 0].reshape(-1, k1 ** 3).T)   # (125, 32)
        self.b1 = params.conv1_b.data
        w2 = params.conv2_w.data
        self.k2 = w2.shape[2]
        self.w2 = w2
        self.w2mat = np.ascontiguousarray(
            w2.transpose(2, 3, 4, 1, 0).reshape(-1, w2.shape[0]))  # (864, 32)
        self.b2 = params.conv2_b.data
        self.fc_w = params.fc_w.data
        self.fc_b = params.fc_b.data
        # background constants: empty input -> zero conv response everywhere
        self.e1 = _elu_(self.b1.astype(np.float32).copy())
        k_bg = (w2.sum(axis=(2, 3, 4)) @ self.e1).astype(np.float32)
        self.e2 = _elu_(k_bg + self.b2)
        side2 = self.side1 // 2 - self.k2 + 1                   # conv2 output side
        self.side2 = side2
        self.pooled2_side = side2 // 2
        bg_flat = np.broadcast_to(
            self.e2[:, None], (len(self.e2), self.pooled2_side ** 3))
        self.bg_code = (bg_flat.reshape(-1) @ self.fc_w.T + self.fc_b)

    def _conv1_box(self, pts: np.ndarray, lo: np.ndarray, size: np.ndarray):
        """Dense (s0, s1, s2, 32) block of conv1 responses at box lo + size.

        Each occupied voxel contributes kernel row w1mat[d] at output position
        voxel - d; contributions grouped by position with sort + reduceat.
        """
        local = (pts - lo)[:, None, :] - self.offsets[None, :, :]
        valid = np.all((local >= 0) & (local < size), axis=2)
        rows = (local[..., 0] * size[1] + local[..., 1]) * size[2] + local[..., 2]
        rows = rows[valid]
        cols = np.broadcast_to(np.arange(self.k1 ** 3), valid.shape)[valid]
        order = np.argsort(rows, kind="stable")
        rows = rows[order]
        starts = np.flatnonzero(np.diff(rows, prepend=rows[0] - 1))
        out = np.zeros((int(size.prod()), self.w1mat.shape[1]), np.float32)
        out[rows[starts]] = np.add.reduceat(self.w1mat[cols[order]], starts,
                                            axis=0)
        return out.reshape(*size, -1)

    def encode_one(self, grid: np.ndarray) -> np.ndarray:
        pts = np.argwhere(grid)
        if not len(pts):
            return self.bg_code.copy()
        k1, k2 = self.k1, self.k2
        # conv1 deviation box, even-aligned so pool windows never straddle it
        d1lo = np.maximum(pts.min(axis=0) - (k1 - 1), 0)
        d1hi = np.minimum(pts.max(axis=0) + 1, self.side1)
        d1lo -= d1lo % 2
        d1hi += d1hi % 2
        v = self._conv1_box(pts, d1lo, d1hi - d1lo)
        v += self.b1
        p1 = _pool_last(_elu_(v))                     # box [d1lo/2, d1hi/2)
        p1lo, p1hi = d1lo // 2, d1hi // 2
        # conv2 output positions whose window reaches the pooled deviation
        d2lo = np.maximum(p1lo - (k2 - 1), 0)
        d2hi = np.minimum(p1hi, self.side2)
        sub = np.empty((*(d2hi - d2lo + k2 - 1), len(self.e1)), np.float32)
        sub[:] = self.e1
        a, b = p1lo - d2lo, p1hi - d2lo
        sub[a[0]:b[0], a[1]:b[1], a[2]:b[2]] = p1
        st = sub.strides
        win = np.lib.stride_tricks.as_strided(
            sub, shape=(*(d2hi - d2lo), k2, k2, k2, sub.shape[3]),
            strides=(st[0], st[1], st[2], st[0], st[1], st[2], st[3]))
        col = win.reshape(-1, self.w2mat.shape[0])
        h2 = _elu_(col @ self.w2mat + self.b2).reshape(*(d2hi - d2lo), -1)
        # even-align again for the second pool
        a2lo = d2lo - d2lo % 2
        a2hi = d2hi + d2hi % 2
        al = np.empty((*(a2hi - a2lo), len(self.e2)), np.float32)
        al[:] = self.e2
        a, b = d2lo - a2lo, d2hi - a2lo
        al[a[0]:b[0], a[1]:b[1], a[2]:b[2]] = h2
        p2 = _pool_last(al)
        full = np.empty((self.pooled2_side,) * 3 + (len(self.e2),), np.float32)
        full[:] = self.e2
        a, b = a2lo // 2, a2hi // 2
        full[a[0]:b[0], a[1]:b[1], a[2]:b[2]] = p2
        flat = np.ascontiguousarray(full.transpose(3, 0, 1, 2)).reshape(-1)
        return flat @ self.fc_w.T + self.fc_b


def encode_batch(grids: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Features for a stack of grids, shape (n, 32, 32, 32) -> (n, 128)."""
    grids = np.asarray(grids)
    if grids.ndim != 4 or grids.shape[1:] != (GRID_RESOLUTION,) * 3:
        raise ShapeError(f"expected (n, 32, 32, 32), got {grids.shape}")
    occupancy = grids if grids.dtype == bool else grids != 0
    fast = _FastEncoder(params)
    return np.stack([fast.encode_one(g) for g in occupancy])


def completion_probabilities(grids: np.ndarray, params: CompletionParams) -> np.ndarray:
    """Sigmoid occupancy probabilities for a stack of partial grids."""
    x = Tensor(np.asarray(grids, dtype=np.float32)[:, None], requires_grad=False)
    code, idx1, idx2 = _encode_features(x, params.encoder)
    logits = _decode_logits(code, idx1, idx2, params)
    return expit(logits.data[:, 0])


def complete_shape(partial, params: CompletionParams):
    """Infer occluded occupancy; observed cells are always kept."""
    occ = _grid_array(partial) > 0
    prob = completion_probabilities(occ[None], params)[0]
    completed = (prob > 0.5) | occ
    if isinstance(partial, VoxelGrid):
        return VoxelGrid(completed, partial.extent, partial.origin)
    return completed


@dataclass
class ModelTrainConfig:
    steps: int = 250
    batch_size: int = 16
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("steps, batch_size, and learning_rate must be positive")


@dataclass
class TrainedAutoencoder:
    encoder: EncoderParams
    autoencoder: CompletionParams
    curve: np.ndarray


@dataclass
class TrainedCompletion:
    params: CompletionParams
    curve: np.ndarray


def _as_dataset(grids) -> np.ndarray:
    arr = np.stack([_grid_array(g) for g in grids]) if not isinstance(grids, np.ndarray) \
        else grids.astype(np.float32)
    if arr.ndim != 4 or arr.shape[1:] != (GRID_RESOLUTION,) * 3:
        raise ShapeError(f"expected (n, 32, 32, 32) dataset, got {arr.shape}")
    return arr


def _reconstruction_loss(batch_in, batch_target, params, state):
    x = Tensor(batch_in[:, None], requires_grad=False)
    code, idx1, idx2 = _encode_features(x, params.encoder)
    logits = _decode_logits(code, idx1, idx2, params)
    loss = bce_loss(sigmoid(logits), batch_target[:, None])
    tensors = params.tensors()
    zero_grads(tensors)
    loss.backward()
    adam_step(tensors, {n: t.grad for n, t in tensors.items()}, state)
    return float(loss.data)


def _run_training(inputs, targets, seed, config):
    rng = np.random.default_rng(seed)
    params = CompletionParams.init(rng)
    state = AdamState.init(params.tensors(), config.learning_rate)
    n = len(inputs)
    curve = []
    while len(curve) < config.steps:
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            if len(curve) >= config.steps:
                break
            idx = order[start:start + config.batch_size]
            curve.append(_reconstruction_loss(inputs[idx], targets[idx], params, state))
    return params, np.array(curve)


def train_autoencoder(grids, seed: int, config: ModelTrainConfig | None = None,
                      ) -> TrainedAutoencoder:
    """Fit the autoencoder to reproduce its input grids; returns the encoder half."""
    if len(grids) == 0:
        raise ValueError("empty dataset")
    data = _as_dataset(grids)
    config = config or ModelTrainConfig()
    params, curve = _run_training(data, data, seed, config)
    return TrainedAutoencoder(params.encoder, params, curve)


def train_completion(pairs, seed: int, config: ModelTrainConfig | None = None,
                     ) -> TrainedCompletion:
    """Fit the autoencoder to regress complete grids from partial ones.

    pairs: either a sequence of (partial, complete) grids or a 2-tuple of
    equal-length stacks.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2:
        partial, complete = pairs
    else:
        pairs = list(pairs)
        if not pairs:
            raise ValueError("empty dataset")
        partial, complete = zip(*pairs)
    if len(partial) == 0 or len(complete) == 0:
        raise ValueError("empty dataset")
    partial, complete = _as_dataset(partial), _as_dataset(complete)
    if partial.shape != complete.shape:
        raise ShapeError(f"partial stack {partial.shape} does not match "
                         f"complete stack {complete.shape}")
    config = config or ModelTrainConfig()
    params, curve = _run_training(partial, complete, seed, config)
    return TrainedCompletion(params, curve)


def voxel_iou(a, b) -> float:
    """Intersection over union of two occupancy grids (1.0 when both empty)."""
    a = np.asarray(a.occupancy if isinstance(a, VoxelGrid) else a, dtype=bool)
    b = np.asarray(b.occupancy if isinstance(b, VoxelGrid) else b, dtype=bool)
    union = (a | b).sum()
    if union == 0:
        return 1.0
    return float((a & b).sum() / union)
