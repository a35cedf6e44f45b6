"""The reconstruction network: patch embedding, AMSS block groups, patch unembedding."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .amss import AmssBlockParams, MaskStream, amss_block_forward, init_amss_block, layer_norm
from .autodiff import Tensor, as_tensor, ops
from .autodiff.tensor import get_default_dtype


@dataclass
class NetConfig:
    in_channels: int = 2
    patch_size: int = 4
    embed_dim: int = 16
    groups: int = 2
    blocks_per_group: int = 1
    expansion: int = 2
    n_state: int = 4
    eval_mask: bool = False
    per_direction_ssm: bool = False
    seed: int = 0

    @classmethod
    def full_scale(cls, **overrides) -> "NetConfig":
        base = dict(patch_size=4, embed_dim=180, groups=6, blocks_per_group=2, n_state=16)
        base.update(overrides)
        return cls(**base)

    @property
    def total_blocks(self) -> int:
        return self.groups * self.blocks_per_group


@dataclass
class GroupParams:
    blocks: list[AmssBlockParams]
    norm_w: Tensor
    norm_b: Tensor
    conv_w: Tensor
    conv_b: Tensor


@dataclass
class ModelParams:
    embed_w: Tensor     # (p, p, c, C)
    embed_b: Tensor
    groups: list[GroupParams] = field(default_factory=list)
    unembed_w: Tensor | None = None   # (C, p*p*c), zero at init
    unembed_b: Tensor | None = None


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk nested parameter dataclasses/lists, yielding dotted names."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_parameters(getattr(obj, f.name), name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))


def parameter_count(params) -> int:
    return sum(t.size for _, t in named_parameters(params))


def expected_parameter_count(cfg: NetConfig) -> int:
    """Closed-form parameter count of ``init_model(cfg)``."""
    c, p, ch = cfg.embed_dim, cfg.patch_size, cfg.in_channels
    inner, n = cfg.expansion * c, cfg.n_state
    ssm = 3 * inner * n + inner * inner + 2 * inner
    if cfg.per_direction_ssm:
        ssm *= 4
    block = (2 * c                      # pre-norm
             + c * inner + inner        # gate in
             + 9 * inner + inner        # depth-wise conv
             + ssm
             + 2 * inner                # post-scan norm
             + c * inner + inner        # secondary linear
             + inner * c + c)           # gate out
    group = cfg.blocks_per_group * block + 2 * c + 9 * c * c + c
    embed = p * p * ch * c + c
    unembed = c * p * p * ch + p * p * ch
    return embed + cfg.groups * group + unembed


def init_model(cfg: NetConfig) -> ModelParams:
    rng = np.random.default_rng(cfg.seed)
    dtype = get_default_dtype()
    c, p, ch = cfg.embed_dim, cfg.patch_size, cfg.in_channels

    def uniform(bound, shape):
        return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    params = ModelParams(embed_w=uniform(1.0 / np.sqrt(p * p * ch), (p, p, ch, c)),
                         embed_b=zeros((c,)))
    for _ in range(cfg.groups):
        blocks = [init_amss_block(c, rng, cfg.expansion, cfg.n_state, cfg.per_direction_ssm)
                  for _ in range(cfg.blocks_per_group)]
        params.groups.append(GroupParams(
            blocks=blocks, norm_w=ones((c,)), norm_b=zeros((c,)),
            conv_w=uniform(1.0 / np.sqrt(9 * c), (3, 3, c, c)), conv_b=zeros((c,))))
    params.unembed_w = zeros((c, p * p * ch))
    params.unembed_b = zeros((p * p * ch,))
    return params


def patch_embed(image, params: ModelParams, patch_size: int) -> Tensor:
    """(B, h, w, c) -> (B, h/p, w/p, C) by a stride-p convolution."""
    image = as_tensor(image)
    _, h, w, _ = image.shape
    if h % patch_size or w % patch_size:
        pad_h, pad_w = (-h) % patch_size, (-w) % patch_size
        raise ValueError(f"patch_embed: image {h}x{w} not divisible by patch size {patch_size}; "
                         f"pad by ({pad_h}, {pad_w}) pixels")
    return ops.conv2d(image, params.embed_w, params.embed_b, stride=patch_size)


def patch_unembed(latent, params: ModelParams, patch_size: int) -> Tensor:
    """(B, H, W, C) -> (B, H*p, W*p, c): 1x1 projection then depth-to-space."""
    latent = as_tensor(latent)
    proj = ops.add(ops.matmul(latent, params.unembed_w), params.unembed_b)
    return ops.pixel_shuffle(proj, patch_size)


def group_forward(z: Tensor, group: GroupParams, stream: MaskStream, first_block: int) -> Tensor:
    residual = z
    for m, block in enumerate(group.blocks):
        z = amss_block_forward(z, block, stream, block=first_block + m)
    z = layer_norm(z, group.norm_w, group.norm_b)
    z = ops.conv2d(z, group.conv_w, group.conv_b, padding=1)
    return ops.add(z, residual)


def mambamir_forward(x_u, params: ModelParams, cfg: NetConfig,
                     stream: MaskStream | None = None) -> Tensor:
    """x_hat = x_u + unembed(groups(embed(x_u))) on (B, h, w, c) images."""
    x_u = as_tensor(x_u)
    squeeze = x_u.ndim == 3
    if squeeze:
        x_u = ops.reshape(x_u, (1,) + x_u.shape)
    if x_u.shape[-1] != cfg.in_channels:
        raise ValueError(f"mambamir_forward: expected {cfg.in_channels} channels, got {x_u.shape}")
    stream = stream or MaskStream(seed=cfg.seed, active=cfg.eval_mask)
    z = patch_embed(x_u, params, cfg.patch_size)
    for g, group in enumerate(params.groups):
        z = group_forward(z, group, stream, first_block=g * cfg.blocks_per_group)
    out = ops.add(x_u, patch_unembed(z, params, cfg.patch_size))
    return ops.reshape(out, out.shape[1:]) if squeeze else out
