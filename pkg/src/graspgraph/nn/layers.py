"""Differentiable layers: 3D conv/deconv, max pool/unpool, linear, activations, BCE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import conv as C
from .tensor import ShapeError, Tensor, _make

BCE_EPS = 1e-7


def uniform_init(rng, shape, fan_in, dtype=np.float32):
    """Uniform in +-1/sqrt(fan_in); the seeded default for all weights."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _batched(x: Tensor, expected_ndim: int):
    """Return (data with batch axis, had_batch flag)."""
    if x.ndim == expected_ndim:
        return x.data[None], False
    if x.ndim == expected_ndim + 1:
        return x.data, True
    raise ShapeError(f"expected {expected_ndim}- or {expected_ndim + 1}-d input, got {x.shape}")


def _debatch(arr, had_batch):
    return arr if had_batch else arr[0]


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1, no-padding 3D correlation.

    Accepts (Ci, D, H, W) or (B, Ci, D, H, W); spatial dims shrink by k - 1.
    """
    xd, had_batch = _batched(x, 4)
    if xd.shape[1] != weight.shape[1]:
        raise ShapeError(f"input {x.shape} does not match weight {weight.shape}")
    k = weight.shape[2]
    if min(xd.shape[2:]) < k:
        raise ShapeError(f"input {x.shape} smaller than kernel {weight.shape}")
    out = C.conv3d_forward(xd, weight.data)
    if bias is not None:
        out += bias.data[None, :, None, None, None]
    in_shape = xd.shape

    def backward(grad):
        g = grad if had_batch else grad[None]
        if x.requires_grad:
            x._accumulate(_debatch(C.conv3d_backward_input(g, weight.data, in_shape), had_batch))
        if weight.requires_grad:
            weight._accumulate(C.conv3d_backward_weight(xd, g, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3, 4)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(_debatch(out, had_batch), parents, backward)


def conv_transpose3d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Adjoint of conv3d; weight laid out (Ci, Co, k, k, k), dims grow by k - 1."""
    xd, had_batch = _batched(x, 4)
    if xd.shape[1] != weight.shape[0]:
        raise ShapeError(f"input {x.shape} does not match weight {weight.shape}")
    k = weight.shape[2]
    out = C.conv_transpose3d_forward(xd, weight.data)
    if bias is not None:
        out += bias.data[None, :, None, None, None]

    def backward(grad):
        g = grad if had_batch else grad[None]
        if x.requires_grad:
            x._accumulate(_debatch(C.conv_transpose3d_backward_input(g, weight.data), had_batch))
        if weight.requires_grad:
            weight._accumulate(C.conv_transpose3d_backward_weight(xd, g, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3, 4)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(_debatch(out, had_batch), parents, backward)


@dataclass
class PoolIndices:
    """Within-window argmax (values 0..7) recorded by maxpool3d, window 2."""

    argmax: np.ndarray          # (B, C, d, h, w) uint8
    input_shape: tuple
    had_batch: bool

    def __post_init__(self):
        assert self.argmax.max(initial=0) < 8


def _pool_scatter_index(idx):
    """Turn within-window argmax into full fancy indices on the unpooled array."""
    b, c, d, h, w = idx.shape
    bi, ci, di, hi, wi = np.indices((b, c, d, h, w), sparse=True)
    return (bi, ci, 2 * di + (idx >> 2), 2 * hi + ((idx >> 1) & 1), 2 * wi + (idx & 1))


def maxpool3d(x: Tensor) -> tuple[Tensor, PoolIndices]:
    """2x2x2 max pooling with stride 2; records argmax indices for unpooling."""
    xd, had_batch = _batched(x, 4)
    b, c, d, h, w = xd.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError(f"spatial dims of {x.shape} not divisible by 2")
    windows = (xd.reshape(b, c, d // 2, 2, h // 2, 2, w // 2, 2)
               .transpose(0, 1, 2, 4, 6, 3, 5, 7)
               .reshape(b, c, d // 2, h // 2, w // 2, 8))
    arg = windows.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    indices = PoolIndices(arg, xd.shape, had_batch)

    def backward(grad):
        if x.requires_grad:
            g = grad if had_batch else grad[None]
            gx = np.zeros(xd.shape, dtype=g.dtype)
            gx[_pool_scatter_index(arg)] = g
            x._accumulate(_debatch(gx, had_batch))

    return _make(_debatch(out, had_batch), (x,), backward), indices


def maxunpool3d(x: Tensor, indices: PoolIndices) -> Tensor:
    """Place each value at its recorded argmax position, zeros elsewhere."""
    xd, had_batch = _batched(x, 4)
    if xd.shape != indices.argmax.shape:
        raise ShapeError(f"input {x.shape} does not match pool indices {indices.argmax.shape}")
    scatter = _pool_scatter_index(indices.argmax)
    out = np.zeros(indices.input_shape, dtype=xd.dtype)
    out[scatter] = xd

    def backward(grad):
        if x.requires_grad:
            g = grad if had_batch else grad[None]
            x._accumulate(_debatch(g[scatter], had_batch))

    return _make(_debatch(out, had_batch), (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map y = W x + b for x (n,) or batched (B, n); weight is (m, n)."""
    xd, had_batch = _batched(x, 1)
    if xd.shape[1] != weight.shape[1]:
        raise ShapeError(f"input {x.shape} does not match weight {weight.shape}")
    out = xd @ weight.data.T + bias.data

    def backward(grad):
        g = grad if had_batch else grad[None]
        if x.requires_grad:
            x._accumulate(_debatch(g @ weight.data, had_batch))
        if weight.requires_grad:
            weight._accumulate(g.T @ xd)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return _make(_debatch(out, had_batch), (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * mask)

    return _make(np.where(mask, x.data, 0), (x,), backward)


def elu(x: Tensor) -> Tensor:
    """ELU with alpha = 1: x for x >= 0, exp(x) - 1 below."""
    neg = np.expm1(np.minimum(x.data, 0))
    out = np.where(x.data >= 0, x.data, neg)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * np.where(x.data >= 0, 1.0, neg + 1.0).astype(x.dtype))

    return _make(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * (s * (1.0 - s)))

    return _make(s, (x,), backward)


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        return {"ELU": elu, "ReLU": relu, "sigmoid": sigmoid}[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7]."""
    t = np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ShapeError(f"prediction {pred.shape} does not match target {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_loss targets must be 0 or 1")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)
    n = p.size
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()

    def backward(grad):
        if pred.requires_grad:
            g = np.where(inside, (p - t) / (p * (1.0 - p) * n), 0.0).astype(pred.dtype)
            pred._accumulate(grad * g)

    return _make(np.asarray(loss, dtype=pred.dtype), (pred,), backward)
