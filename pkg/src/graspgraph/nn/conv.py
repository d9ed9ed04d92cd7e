"""Array-level 3D convolution cores (valid correlation, stride 1, no padding).

All heavy lifting goes through two reshapes of the same idea:

* ``_im2col``: kernel-position-major column matrix ``(C*k^3, B*S_out)`` built
  from row-contiguous writes, so the subsequent sgemm runs at BLAS speed.
* ``_col2im_add``: the exact scatter-add inverse, used both for the gradient
  w.r.t. the convolution input and for the forward transposed convolution.
  Sharing the routine makes conv_transpose3d the adjoint of conv3d by
  construction.

Batches are chunked so no intermediate exceeds ~150 MB.
"""

from __future__ import annotations

import numpy as np

_COL_BYTE_BUDGET = 150e6


def _out_dim(n, k):
    return n - k + 1


def _chunk_size(c, k, s_out, itemsize):
    per_sample = c * k ** 3 * s_out * itemsize
    return max(1, int(_COL_BYTE_BUDGET / max(per_sample, 1)))


def _im2col(x, k):
    """x (B, C, D, H, W) -> col (C*k^3, B*Do*Ho*Wo)."""
    b, c = x.shape[:2]
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k, k), axis=(2, 3, 4))
    # (B, C, Do, Ho, Wo, k, k, k) view -> (C, k, k, k, B, Do, Ho, Wo) copy
    col = np.ascontiguousarray(windows.transpose(1, 5, 6, 7, 0, 2, 3, 4))
    return col.reshape(c * k * k * k, -1)


def _col2im_add(p, b, c, d, h, w, k, out=None):
    """Scatter-add p (C*k^3, B*Do*Ho*Wo) back onto an (B, C, D, H, W) array."""
    do, ho, wo = _out_dim(d, k), _out_dim(h, k), _out_dim(w, k)
    if out is None:
        out = np.zeros((b, c, d, h, w), dtype=p.dtype)
    row = 0
    for ci in range(c):
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    out[:, ci, i:i + do, j:j + ho, l:l + wo] += p[row].reshape(b, do, ho, wo)
                    row += 1
    return out


def conv3d_forward(x, w):
    """Valid correlation of x (B, Ci, D, H, W) with w (Co, Ci, k, k, k)."""
    b, ci, d, h, wd = x.shape
    co, ci_w, k = w.shape[0], w.shape[1], w.shape[2]
    if ci != ci_w:
        raise ValueError(f"channel mismatch: input {x.shape} vs weight {w.shape}")
    do, ho, wo = _out_dim(d, k), _out_dim(h, k), _out_dim(wd, k)
    if min(do, ho, wo) < 1:
        raise ValueError(f"kernel {w.shape} larger than input {x.shape}")
    wmat = w.reshape(co, ci * k ** 3)
    out = np.empty((b, co, do, ho, wo), dtype=x.dtype)
    step = _chunk_size(ci, k, do * ho * wo, x.dtype.itemsize)
    for s in range(0, b, step):
        e = min(s + step, b)
        col = _im2col(x[s:e], k)
        out[s:e] = (wmat @ col).reshape(co, e - s, do, ho, wo).transpose(1, 0, 2, 3, 4)
    return out


def conv3d_backward_weight(x, grad_out, k):
    """Gradient of conv3d_forward w.r.t. w, same chunking as forward."""
    b, ci = x.shape[:2]
    co = grad_out.shape[1]
    do, ho, wo = grad_out.shape[2:]
    gw = np.zeros((co, ci * k ** 3), dtype=x.dtype)
    step = _chunk_size(ci, k, do * ho * wo, x.dtype.itemsize)
    for s in range(0, b, step):
        e = min(s + step, b)
        col = _im2col(x[s:e], k)
        gmat = grad_out[s:e].transpose(1, 0, 2, 3, 4).reshape(co, -1)
        gw += gmat @ col.T
    return gw.reshape(co, ci, k, k, k)


def conv3d_backward_input(grad_out, w, in_shape):
    """Gradient of conv3d_forward w.r.t. x; also the transposed-conv forward."""
    b, ci, d, h, wd = in_shape
    co, _, k = w.shape[0], w.shape[1], w.shape[2]
    wmat = w.reshape(co, ci * k ** 3)
    gx = np.zeros(in_shape, dtype=grad_out.dtype)
    step = _chunk_size(ci, k, np.prod(grad_out.shape[2:]), grad_out.dtype.itemsize)
    for s in range(0, b, step):
        e = min(s + step, b)
        gmat = grad_out[s:e].transpose(1, 0, 2, 3, 4).reshape(co, -1)
        p = wmat.T @ gmat
        _col2im_add(p, e - s, ci, d, h, wd, k, out=gx[s:e])
    return gx


def conv_transpose3d_forward(x, w):
    """Transposed conv of x (B, Ci, d, h, w) with w (Ci, Co, k, k, k).

    Exact adjoint of conv3d_forward with the weight axes read as
    (Co_conv, Ci_conv, k, k, k): spatial dims grow by k - 1.
    """
    b, ci = x.shape[:2]
    if ci != w.shape[0]:
        raise ValueError(f"channel mismatch: input {x.shape} vs weight {w.shape}")
    k = w.shape[2]
    co = w.shape[1]
    d, h, wd = (n + k - 1 for n in x.shape[2:])
    return conv3d_backward_input(x, w.reshape(ci, co, k, k, k), (b, co, d, h, wd))


def conv_transpose3d_backward_input(grad_out, w):
    return conv3d_forward(grad_out, w)


def conv_transpose3d_backward_weight(x, grad_out, k):
    ci = x.shape[1]
    co = grad_out.shape[1]
    gw = conv3d_backward_weight(grad_out, x, k)  # (Ci, Co, k, k, k) layout
    return gw.reshape(ci, co, k, k, k)
