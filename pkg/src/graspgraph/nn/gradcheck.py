"""Finite-difference validation of the autodiff engine.

Runs the function under test on float64 shadow copies (the engine follows the
input dtype), backpropagates, then compares each analytic derivative against a
central difference.  Points where the loss is locally non-smooth (max-pool
ties, ReLU kinks sitting exactly on the fold) are detected with a second
difference and skipped rather than failed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    n_checked: int = 0
    n_skipped: int = 0
    per_input: dict = field(default_factory=dict)

    def __str__(self):
        worst = max(self.per_input, key=self.per_input.get) if self.per_input else "-"
        return (f"grad check: {self.n_checked} entries, max rel err "
                f"{self.max_rel_err:.3e} (worst input {worst}), "
                f"{self.n_skipped} non-smooth skips")


def _scalarize(fn, seed):
    """Wrap fn so it returns a scalar via a fixed random projection."""
    proj_rng = np.random.Generator(np.random.PCG64(seed))
    cache = {}

    def wrapped(*tensors):
        out = fn(*tensors)
        if out.size == 1:
            return out
        if "r" not in cache:
            cache["r"] = proj_rng.standard_normal(out.shape)
        return (out * Tensor(cache["r"].astype(out.dtype))).sum()

    return wrapped


def grad_check(fn, inputs, step=1e-3, max_checks=64, seed=0,
               nonsmooth_tol=1e-4) -> GradCheckReport:
    """Compare analytic and numeric gradients of ``fn(*inputs)``.

    inputs is a dict name -> numpy array; every input is treated as
    differentiable.  Relative error is |a - n| / max(1, |n|).  At most
    ``max_checks`` entries per input are probed (sampled with a fixed seed).
    """
    fn = _scalarize(fn, seed)
    shadows = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
               for k, v in inputs.items()}
    order = list(shadows)

    def run():
        return fn(*(shadows[k] for k in order))

    out = run()
    out.backward()
    analytic = {k: (shadows[k].grad if shadows[k].grad is not None
                    else np.zeros_like(shadows[k].data)) for k in order}
    f0 = float(out.data)

    rng = np.random.Generator(np.random.PCG64(seed + 1))
    report = GradCheckReport()
    for name in order:
        t = shadows[name]
        flat = t.data.reshape(-1)
        n = flat.size
        picks = np.arange(n) if n <= max_checks else rng.choice(n, size=max_checks,
                                                                replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(run().data)
            flat[i] = orig - step
            f_minus = float(run().data)
            flat[i] = orig
            if abs(f_plus + f_minus - 2.0 * f0) > nonsmooth_tol * max(1.0, abs(f0)):
                report.n_skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[name].reshape(-1)[i])
            err = abs(a - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
            report.n_checked += 1
        report.per_input[name] = worst
        report.max_rel_err = max(report.max_rel_err, worst)
    return report
