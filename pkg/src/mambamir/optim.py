"""Bias-corrected Adam over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: list[int] = field(default_factory=list)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: AdamState,
              lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> bool:
    """Update ``params`` in place. Returns False (and records the step) when any
    gradient is non-finite; nothing is changed in that case."""
    for g in grads.values():
        if g is not None and not np.all(np.isfinite(g)):
            state.skipped.append(state.step)
            return False
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data, dtype=np.float64)
            state.v[name] = np.zeros_like(p.data, dtype=np.float64)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g.astype(np.float64) ** 2)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)
    return True


def collect_grads(params: dict[str, Tensor], zero: bool = True) -> dict[str, np.ndarray | None]:
    grads = {name: p.grad for name, p in params.items()}
    if zero:
        for p in params.values():
            p.grad = None
    return grads
