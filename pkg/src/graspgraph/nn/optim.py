"""Adam optimizer over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict, lr: float, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        return state


def adam_step(params: dict, grads: dict | None, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place.

    grads maps parameter name to gradient array; pass None to read each
    Tensor's own .grad.  A missing gradient is a contract violation.
    """
    state.step_count += 1
    t = state.step_count
    correct1 = 1.0 - state.beta1 ** t
    correct2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if name not in state.first_moment:
            raise KeyError(f"parameter {name!r} missing from optimizer state")
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            raise ValueError(f"no gradient for parameter {name!r}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / correct1) / (np.sqrt(v / correct2) + state.epsilon)


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None


def fill_missing_grads(params: dict) -> None:
    """Give untouched parameters explicit zero gradients before adam_step."""
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def clip_grad_norm(params: dict, max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm; returns the norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def param_tensor(rng, shape, fan_in) -> Tensor:
    """Trainable tensor initialized uniform +-1/sqrt(fan_in)."""
    from .layers import uniform_init

    return Tensor(uniform_init(rng, shape, fan_in), requires_grad=True)
