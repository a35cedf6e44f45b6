"""Selective state-space (S6) core: discretization, input projections, scan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, ops
from .autodiff.tensor import get_default_dtype

DT_MIN = 1e-3
DT_MAX = 1e-1


@dataclass
class SsmParams:
    """Per-block S6 parameters for ``channels`` channels and ``n_state`` states.

    The state matrix is diagonal per channel, stored as ``A = -exp(a_log)``.
    """

    a_log: Tensor  # (C, N)
    d: Tensor      # (C,)
    w_b: Tensor    # (C, N)
    w_c: Tensor    # (C, N)
    w_dt: Tensor   # (C, C)
    b_dt: Tensor   # (C,)

    @property
    def channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def n_state(self) -> int:
        return self.a_log.shape[1]

    def state_matrix(self) -> Tensor:
        return ops.neg(ops.exp(self.a_log))


@dataclass
class ScanSequence:
    tokens: Tensor  # (S, L, C)
    b: Tensor       # (S, L, N)
    c: Tensor       # (S, L, N)
    delta: Tensor   # (S, L, C)


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


def init_ssm_params(channels: int, n_state: int, rng: np.random.Generator,
                    dt_min: float = DT_MIN, dt_max: float = DT_MAX) -> SsmParams:
    dtype = get_default_dtype()
    bound = 1.0 / np.sqrt(channels)
    a_log = np.log(np.tile(np.arange(1, n_state + 1, dtype=np.float64), (channels, 1)))
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=channels))

    def param(arr):
        return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)

    return SsmParams(
        a_log=param(a_log),
        d=param(np.ones(channels)),
        w_b=param(rng.uniform(-bound, bound, (channels, n_state))),
        w_c=param(rng.uniform(-bound, bound, (channels, n_state))),
        w_dt=param(rng.uniform(-bound, bound, (channels, channels))),
        b_dt=param(inverse_softplus(dt)),
    )


def discretize(delta, a, b, exact: bool = False) -> tuple[Tensor, Tensor]:
    """Zero-order-hold style transition: a_bar = exp(delta*a), b_bar = delta*b.

    With ``exact=True`` the input matrix uses (exp(delta*a) - 1) / a * b instead
    of the first-order form. Shapes broadcast.
    """
    delta, a, b = as_tensor(delta), as_tensor(a), as_tensor(b)
    if np.any(delta.data <= 0):
        raise ValueError("discretize: delta must be strictly positive")
    a_bar = ops.exp(ops.mul(delta, a))
    if exact:
        b_bar = ops.mul(ops.div(ops.sub(a_bar, 1.0), a), b)
    else:
        b_bar = ops.mul(delta, b)
    return a_bar, b_bar


def project_params(tokens, params: SsmParams) -> ScanSequence:
    """Input-dependent B, C and timescale for each token of (S, L, C) sequences."""
    tokens = as_tensor(tokens)
    if tokens.ndim != 3 or tokens.shape[-1] != params.channels:
        raise ValueError(
            f"project_params: tokens {tokens.shape} do not match {params.channels} channels")
    b = ops.matmul(tokens, params.w_b)
    c = ops.matmul(tokens, params.w_c)
    delta = ops.softplus(ops.add(ops.matmul(tokens, params.w_dt), params.b_dt))
    return ScanSequence(tokens=tokens, b=b, c=c, delta=delta)


def selective_scan(seq: ScanSequence, params: SsmParams, exact: bool = False) -> Tensor:
    """Run h_k = A_bar_k h_{k-1} + B_bar_k u_k, y_k = <C_k, h_k> + D u_k per channel.

    Returns (S, L, C); h_0 = 0.
    """
    u = seq.tokens
    s, length, ch = u.shape
    n = params.n_state
    if seq.b.shape != (s, length, n) or seq.c.shape != (s, length, n) or seq.delta.shape != u.shape:
        raise ValueError("selective_scan: inconsistent sequence shapes "
                         f"u={u.shape} b={seq.b.shape} c={seq.c.shape} delta={seq.delta.shape}")
    delta = ops.reshape(seq.delta, (s, length, ch, 1))
    a = params.state_matrix()                           # (C, N)
    b = ops.reshape(seq.b, (s, length, 1, n))
    a_bar, b_bar = discretize(delta, a, b, exact=exact)  # (S, L, C, N)
    drive = ops.mul(b_bar, ops.reshape(u, (s, length, ch, 1)))
    h = ops.linear_recurrence(a_bar, drive)
    y = ops.sum(ops.mul(h, ops.reshape(seq.c, (s, length, 1, n))), axis=-1)
    return ops.add(y, ops.mul(u, params.d))


def s6(tokens, params: SsmParams, exact: bool = False) -> Tensor:
    """Project then scan: the full selective SSM on (S, L, C) token sequences."""
    return selective_scan(project_params(tokens, params), params, exact=exact)

