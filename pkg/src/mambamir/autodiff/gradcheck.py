"""Central-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, backward


class GradCheckError(RuntimeError):
    def __init__(self, message: str, index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.index = index


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: np.ndarray
    numeric: np.ndarray

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(f: Callable[..., Tensor], x, step: float = 1e-5) -> GradCheckResult:
    """Compare d f / d x from the tape with central differences.

    ``x`` is a float64 Tensor (or a sequence of them; errors are pooled).
    The error per coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    if not 1e-6 <= step <= 1e-4:
        raise ValueError(f"step {step} outside [1e-6, 1e-4]")
    xs = list(x) if isinstance(x, (list, tuple)) else [x]
    for t in xs:
        if t.dtype != np.float64:
            raise ValueError("grad_check requires 64-bit tensors")
        t.requires_grad = True
        t.grad = None

    out = f(*xs)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise GradCheckError("non-finite function value at the base point")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    numeric = [np.zeros_like(t.data) for t in xs]
    for ti, t in enumerate(xs):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(*xs).data)
            flat[i] = orig - step
            fm = float(f(*xs).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                idx = np.unravel_index(i, t.shape)
                raise GradCheckError(f"non-finite value of f at coordinate {idx} of input {ti}",
                                     index=tuple(int(j) for j in idx))
            numeric[ti].reshape(-1)[i] = (fp - fm) / (2 * step)

    worst, worst_idx = 0.0, ()
    for ti, (a, n) in enumerate(zip(analytic, numeric)):
        err = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        if err.size and err.max() >= worst:
            worst = float(err.max())
            worst_idx = (ti,) + tuple(int(j) for j in np.unravel_index(err.argmax(), err.shape))
    a_all = np.concatenate([a.reshape(-1) for a in analytic])
    n_all = np.concatenate([n.reshape(-1) for n in numeric])
    return GradCheckResult(worst, worst_idx, a_all, n_all)
