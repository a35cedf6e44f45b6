"""Arbitrary-masked S6 (four-direction scans with random scan masking) and the AMSS block."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, as_tensor, ops
from .autodiff.tensor import get_default_dtype
from .ssm import SsmParams, init_ssm_params, s6

ORDER_IDS = ("row-TL", "col-TL", "row-BR", "col-BR")


def keyed_rng(seed: int, step: int, sample: int, block: int) -> np.random.Generator:
    """Counter-based stream for one (seed, step, sample, block) tuple."""
    key = np.random.SeedSequence([int(seed), int(step), int(sample), int(block)])
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True)
class MaskStream:
    """Where mask draws come from for one forward pass.

    ``samples`` holds one id per batch item. Masking happens only when
    ``active`` is set (training, or stochastic inference).
    """

    seed: int = 0
    step: int = 0
    samples: tuple[int, ...] = (0,)
    active: bool = False

    def for_batch(self, batch: int) -> tuple[int, ...]:
        if len(self.samples) == batch:
            return tuple(self.samples)
        if len(self.samples) == 1:
            return tuple(self.samples[0] + i for i in range(batch))
        raise ValueError(f"MaskStream has {len(self.samples)} sample ids for a batch of {batch}")


@dataclass(frozen=True)
class MaskDraw:
    s: int
    masked_ids: tuple[str, ...]
    key: tuple[int, int, int, int]

    def keep(self) -> np.ndarray:
        return np.array([name not in self.masked_ids for name in ORDER_IDS])


def draw_mask(seed: int, step: int, sample: int, block: int, active: bool = True) -> MaskDraw:
    key = (int(seed), int(step), int(sample), int(block))
    if not active:
        return MaskDraw(0, (), key)
    rng = keyed_rng(*key)
    s = int(rng.integers(0, 4))
    picked = sorted(rng.choice(4, size=s, replace=False).tolist())
    return MaskDraw(s, tuple(ORDER_IDS[i] for i in picked), key)


def scan_orders(h: int, w: int) -> np.ndarray:
    """(4, H*W) flat grid indices visited by each scan, in ORDER_IDS order."""
    grid = np.arange(h * w).reshape(h, w)
    row_tl = grid.reshape(-1)
    col_tl = grid.T.reshape(-1)
    return np.stack([row_tl, col_tl, row_tl[::-1], col_tl[::-1]])


@dataclass
class ScanBundle:
    """Four scan sequences of one grid, shape (B, 4, L, C)."""

    sequences: Tensor
    height: int
    width: int
    order_ids: tuple[str, ...] = ORDER_IDS


def scan_expand(grid) -> ScanBundle:
    """Unfold (B, H, W, C) tokens into the four ordered scans."""
    grid = as_tensor(grid)
    if grid.ndim == 3:
        grid = ops.reshape(grid, (1,) + grid.shape)
    b, h, w, c = grid.shape
    flat = ops.reshape(grid, (b, h * w, c))
    seqs = ops.take(flat, scan_orders(h, w).reshape(-1), axis=1)
    return ScanBundle(ops.reshape(seqs, (b, 4, h * w, c)), h, w)


def arbitrary_mask(bundle: ScanBundle, stream: MaskStream, block: int = 0
                   ) -> tuple[ScanBundle, list[MaskDraw]]:
    """Zero s of the four scans per batch item, s ~ Uniform{0,1,2,3}."""
    b = bundle.sequences.shape[0]
    draws = [draw_mask(stream.seed, stream.step, sid, block, stream.active)
             for sid in stream.for_batch(b)]
    if not any(d.s for d in draws):
        return bundle, draws
    keep = np.stack([d.keep() for d in draws]).astype(bundle.sequences.dtype)
    masked = ops.mul(bundle.sequences, keep.reshape(b, 4, 1, 1))
    return ScanBundle(masked, bundle.height, bundle.width, bundle.order_ids), draws


def scan_merge(bundle: ScanBundle, draws: Sequence[MaskDraw]) -> Tensor:
    """Inverse-permute every surviving scan and average them back onto the grid."""
    seqs = bundle.sequences
    b, _, length, c = seqs.shape
    h, w = bundle.height, bundle.width
    if len(draws) != b:
        raise ValueError(f"scan_merge: {len(draws)} mask draws for a batch of {b}")
    inverse = np.argsort(scan_orders(h, w), axis=1)
    gather = (inverse + np.arange(4)[:, None] * length).reshape(-1)
    grids = ops.reshape(ops.take(ops.reshape(seqs, (b, 4 * length, c)), gather, axis=1),
                        (b, 4, length, c))
    keep = np.stack([d.keep() for d in draws]).astype(np.float64)
    weights = (keep / keep.sum(axis=1, keepdims=True)).astype(seqs.dtype)
    merged = ops.sum(ops.mul(grids, weights.reshape(b, 4, 1, 1)), axis=1)
    return ops.reshape(merged, (b, h, w, c))


def ams6_forward(grid, params: SsmParams | Sequence[SsmParams], stream: MaskStream,
                 block: int = 0, process: Callable[[Tensor], Tensor] | None = None) -> Tensor:
    """scan_expand -> arbitrary_mask -> S6 on every scan -> scan_merge.

    ``params`` may be a list of four parameter sets (one per direction).
    ``process`` replaces the S6 stage; it maps (S, L, C) to (S, L, C).
    """
    grid = as_tensor(grid)
    squeeze = grid.ndim == 3
    bundle = scan_expand(grid)
    bundle, draws = arbitrary_mask(bundle, stream, block)
    b, _, length, c = bundle.sequences.shape
    if process is not None:
        out = process(ops.reshape(bundle.sequences, (b * 4, length, c)))
        out = ops.reshape(out, (b, 4, length, c))
    elif isinstance(params, SsmParams):
        out = ops.reshape(s6(ops.reshape(bundle.sequences, (b * 4, length, c)), params),
                          (b, 4, length, c))
    else:
        per_dir = [ops.reshape(s6(bundle.sequences[:, k], p), (b, 1, length, c))
                   for k, p in enumerate(params)]
        out = ops.concat(per_dir, axis=1)
    merged = scan_merge(ScanBundle(out, bundle.height, bundle.width), draws)
    return ops.reshape(merged, merged.shape[1:]) if squeeze else merged


# -- AMSS block ----------------------------------------------------------------

@dataclass
class AmssBlockParams:
    norm_w: Tensor
    norm_b: Tensor
    in_w: Tensor      # (C, E*C)
    in_b: Tensor
    dw_w: Tensor      # (3, 3, 1, E*C)
    dw_b: Tensor
    ssm: SsmParams | list[SsmParams]
    post_w: Tensor
    post_b: Tensor
    sec_w: Tensor     # (C, E*C)
    sec_b: Tensor
    out_w: Tensor     # (E*C, C)
    out_b: Tensor
    expansion: int = 2


def _uniform(rng, bound, shape) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, shape).astype(get_default_dtype()), requires_grad=True)


def _const(value, shape) -> Tensor:
    return Tensor(np.full(shape, value, dtype=get_default_dtype()), requires_grad=True)


def init_amss_block(channels: int, rng: np.random.Generator, expansion: int = 2,
                    n_state: int = 4, per_direction: bool = False,
                    zero_out: bool = False) -> AmssBlockParams:
    inner = expansion * channels
    b_in, b_inner = 1.0 / np.sqrt(channels), 1.0 / np.sqrt(inner)
    if per_direction:
        ssm = [init_ssm_params(inner, n_state, rng) for _ in ORDER_IDS]
    else:
        ssm = init_ssm_params(inner, n_state, rng)
    out_w = _const(0.0, (inner, channels)) if zero_out else _uniform(rng, b_inner, (inner, channels))
    return AmssBlockParams(
        norm_w=_const(1.0, (channels,)), norm_b=_const(0.0, (channels,)),
        in_w=_uniform(rng, b_in, (channels, inner)), in_b=_const(0.0, (inner,)),
        dw_w=_uniform(rng, 1.0 / 3.0, (3, 3, 1, inner)), dw_b=_const(0.0, (inner,)),
        ssm=ssm,
        post_w=_const(1.0, (inner,)), post_b=_const(0.0, (inner,)),
        sec_w=_uniform(rng, b_in, (channels, inner)), sec_b=_const(0.0, (inner,)),
        out_w=out_w, out_b=_const(0.0, (channels,)),
        expansion=expansion,
    )


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return ops.add(ops.mul(ops.layernorm(x), weight), bias)


def amss_block_forward(x, params: AmssBlockParams, stream: MaskStream, block: int = 0) -> Tensor:
    """Residual AMSS block on (B, H, W, C) tokens.

    primary = norm(ams6(silu(dwconv(gate_in(z))))), secondary = silu(linear(z)),
    out = x + gate_out(primary * secondary), with z = norm(x).
    """
    x = as_tensor(x)
    if x.ndim == 3:
        return ops.reshape(amss_block_forward(ops.reshape(x, (1,) + x.shape), params, stream, block),
                           x.shape)
    inner = params.in_w.shape[1]
    z = layer_norm(x, params.norm_w, params.norm_b)
    p = ops.add(ops.matmul(z, params.in_w), params.in_b)
    p = ops.silu(ops.conv2d(p, params.dw_w, params.dw_b, padding=1, groups=inner))
    p = ams6_forward(p, params.ssm, stream, block)
    p = layer_norm(p, params.post_w, params.post_b)
    q = ops.silu(ops.add(ops.matmul(z, params.sec_w), params.sec_b))
    out = ops.add(ops.matmul(ops.mul(p, q), params.out_w), params.out_b)
    return ops.add(x, out)
