"""Minimal deterministic neural network engine on numpy.

Reverse-mode autodiff (:mod:`.tensor`), 3D convolution layers (:mod:`.layers`),
segment reductions for graphs (:mod:`.graph_ops`), Adam (:mod:`.optim`), a
finite-difference gradient checker (:mod:`.gradcheck`) and a binary checkpoint
format (:mod:`.checkpoint`).
"""

from .checkpoint import load_checkpoint, load_meta, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .graph_ops import gather_rows, segment_mean, segment_softmax_aggregate, segment_sum
from .layers import (
    PoolIndices,
    activation,
    bce_loss,
    conv3d,
    conv_transpose3d,
    elu,
    linear,
    maxpool3d,
    maxunpool3d,
    relu,
    sigmoid,
    uniform_init,
)
from .optim import (
    AdamState,
    adam_step,
    clip_grad_norm,
    fill_missing_grads,
    param_tensor,
    zero_grads,
)
from .tensor import ShapeError, Tensor, concat_rows

__all__ = [
    "AdamState",
    "GradCheckReport",
    "PoolIndices",
    "ShapeError",
    "Tensor",
    "activation",
    "adam_step",
    "bce_loss",
    "clip_grad_norm",
    "concat_rows",
    "conv3d",
    "conv_transpose3d",
    "elu",
    "fill_missing_grads",
    "gather_rows",
    "grad_check",
    "linear",
    "load_checkpoint",
    "load_meta",
    "maxpool3d",
    "maxunpool3d",
    "param_tensor",
    "relu",
    "save_checkpoint",
    "segment_mean",
    "segment_softmax_aggregate",
    "segment_sum",
    "sigmoid",
    "uniform_init",
    "zero_grads",
]
