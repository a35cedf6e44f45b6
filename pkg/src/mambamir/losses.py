"""Charbonnier, transform-domain, perceptual and adversarial losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, ops
from .autodiff.tensor import get_default_dtype
from .operators import CtGeometry


@dataclass
class LossWeights:
    alpha: float = 15.0
    beta: float = 0.1
    gamma: float = 0.0025
    eta: float = 0.1
    epsilon: float = 1e-9

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "eta", "epsilon"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {getattr(self, name)}")


def charbonnier(a, b, epsilon: float = 1e-9, per_pixel: bool = False) -> Tensor:
    """sqrt(||a - b||^2 + eps^2) per sample, averaged over the batch (axis 0).

    ``per_pixel`` averages sqrt((a - b)^2 + eps^2) over every element instead.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"charbonnier: shape mismatch {a.shape} vs {b.shape}")
    sq = ops.square(ops.sub(a, b))
    eps2 = epsilon * epsilon
    if per_pixel:
        return ops.mean(ops.sqrt(ops.add(sq, eps2)))
    per_sample = ops.sum(sq, axis=tuple(range(1, a.ndim))) if a.ndim > 1 else sq
    return ops.mean(ops.sqrt(ops.add(per_sample, eps2)))


def transform(x, modality: str, geom: CtGeometry | None = None) -> Tensor:
    """Full orthonormal 2-D DFT (MRI, 2-channel) or full-view fan-beam projection (CT)."""
    x = as_tensor(x)
    if modality == "mri":
        return ops.fft2(x)
    if modality == "ct":
        if geom is None:
            raise ValueError("CT transform loss needs a geometry")
        return ops.linear_map(x, geom.matrix, geom.sino_shape)
    raise ValueError(f"unknown modality {modality!r}")


def transform_loss(x, x_hat, modality: str, geom: CtGeometry | None = None,
                   epsilon: float = 1e-9) -> Tensor:
    return charbonnier(transform(x, modality, geom), transform(x_hat, modality, geom), epsilon)


class FeatureStack:
    """Frozen random conv features standing in for a pretrained perceptual network.

    Three stride-2 3x3 conv stages (widths 8/16/32), SiLU after each.
    """

    widths = (8, 16, 32)

    def __init__(self, in_channels: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        dtype = get_default_dtype()
        self.weights = []
        cin = in_channels
        for cout in self.widths:
            w = rng.normal(0.0, np.sqrt(2.0 / (9 * cin)), (3, 3, cin, cout)).astype(dtype)
            self.weights.append(Tensor(w))
            cin = cout

    def __call__(self, x) -> list[Tensor]:
        feats = []
        h = as_tensor(x)
        for w in self.weights:
            if w.dtype != h.dtype:
                w = Tensor(w.data.astype(h.dtype))
            h = ops.silu(ops.conv2d(h, w, stride=2, padding=1))
            feats.append(h)
        return feats


def perceptual_loss(x, x_hat, feat: FeatureStack) -> Tensor:
    """Mean absolute feature difference, averaged over the stages."""
    fx = feat(x)
    fy = feat(x_hat)
    terms = [ops.mean(ops.abs(ops.sub(a, b))) for a, b in zip(fx, fy)]
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.mul(total, 1.0 / len(terms))


# -- discriminator ---------------------------------------------------------------

@dataclass
class DiscriminatorParams:
    """Two-level U-Net: global logit from the bottleneck, per-pixel logits from the decoder."""

    enc1_w: Tensor
    enc1_b: Tensor
    enc2_w: Tensor
    enc2_b: Tensor
    head_w: Tensor
    head_b: Tensor
    up1_w: Tensor
    up1_b: Tensor
    dec1_w: Tensor
    dec1_b: Tensor
    up2_w: Tensor
    up2_b: Tensor
    pix_w: Tensor
    pix_b: Tensor


def init_discriminator(in_channels: int, seed: int = 0, width: int = 8) -> DiscriminatorParams:
    rng = np.random.default_rng(seed)
    dtype = get_default_dtype()
    w1, w2 = width, 2 * width

    def conv(kh, cin, cout):
        bound = 1.0 / np.sqrt(kh * kh * cin)
        return Tensor(rng.uniform(-bound, bound, (kh, kh, cin, cout)).astype(dtype), requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)

    return DiscriminatorParams(
        enc1_w=conv(3, in_channels, w1), enc1_b=zeros(w1),
        enc2_w=conv(3, w1, w2), enc2_b=zeros(w2),
        head_w=Tensor(rng.uniform(-1, 1, (w2, 1)).astype(dtype) / np.sqrt(w2), requires_grad=True),
        head_b=zeros(1),
        up1_w=conv(1, w2, 4 * w1), up1_b=zeros(4 * w1),
        dec1_w=conv(3, 2 * w1, w1), dec1_b=zeros(w1),
        up2_w=conv(1, w1, 4 * w1), up2_b=zeros(4 * w1),
        pix_w=conv(3, w1, 1), pix_b=zeros(1),
    )


def discriminator_forward(x, d: DiscriminatorParams) -> tuple[Tensor, Tensor]:
    """Returns (global logits (B,), per-pixel logits (B, h, w)). No sigmoid."""
    x = as_tensor(x)
    e1 = ops.silu(ops.conv2d(x, d.enc1_w, d.enc1_b, stride=2, padding=1))
    e2 = ops.silu(ops.conv2d(e1, d.enc2_w, d.enc2_b, stride=2, padding=1))
    pooled = ops.mean(e2, axis=(1, 2))
    global_logit = ops.reshape(ops.add(ops.matmul(pooled, d.head_w), d.head_b), (x.shape[0],))
    u1 = ops.pixel_shuffle(ops.conv2d(e2, d.up1_w, d.up1_b), 2)
    d1 = ops.silu(ops.conv2d(ops.concat([u1, e1], axis=-1), d.dec1_w, d.dec1_b, padding=1))
    u2 = ops.pixel_shuffle(ops.conv2d(d1, d.up2_w, d.up2_b), 2)
    pix = ops.conv2d(u2, d.pix_w, d.pix_b, padding=1)
    return global_logit, ops.reshape(pix, pix.shape[:3])


def bce_with_logits(logits, target: float) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against a constant 0/1 target."""
    logits = as_tensor(logits)
    return ops.mean(ops.softplus(ops.neg(logits) if target == 1 else logits))


def discriminator_loss(real_logits, fake_logits) -> Tensor:
    """Average of the real->1 and fake->0 terms over paired (global, pixel) heads."""
    terms = [ops.mul(ops.add(bce_with_logits(r, 1), bce_with_logits(f, 0)), 0.5)
             for r, f in zip(real_logits, fake_logits)]
    return ops.mul(ops.add(terms[0], terms[1]), 0.5)


def generator_adv_loss(fake_logits) -> Tensor:
    g, p = fake_logits
    return ops.mul(ops.add(bce_with_logits(g, 1), bce_with_logits(p, 1)), 0.5)


def gan_losses(x, x_hat, d_params: DiscriminatorParams) -> tuple[Tensor, Tensor]:
    """(d_loss, g_loss). The discriminator sees a detached copy of ``x_hat``."""
    x_hat = as_tensor(x_hat)
    real = discriminator_forward(x, d_params)
    fake_detached = discriminator_forward(x_hat.detach(), d_params)
    d_loss = discriminator_loss(real, fake_detached)
    g_loss = generator_adv_loss(discriminator_forward(x_hat, d_params))
    return d_loss, g_loss


def total_loss(x, x_hat, weights: LossWeights, modality: str, geom: CtGeometry | None = None,
               feat: FeatureStack | None = None, d_params: DiscriminatorParams | None = None
               ) -> tuple[Tensor, dict[str, float]]:
    """alpha*L_img + beta*L_trans + gamma*L_perc (+ eta*L_adv when ``d_params`` is given).

    Terms with zero weight are skipped. Returns the total and the term values.
    """
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    parts: dict[str, float] = {}
    total = None

    def accumulate(term: Tensor, weight: float, name: str):
        nonlocal total
        parts[name] = float(term.data)
        weighted = ops.mul(term, weight)
        total = weighted if total is None else ops.add(total, weighted)

    accumulate(charbonnier(x, x_hat, weights.epsilon), weights.alpha, "img")
    if weights.beta:
        accumulate(transform_loss(x, x_hat, modality, geom, weights.epsilon), weights.beta, "trans")
    if weights.gamma:
        if feat is None:
            feat = FeatureStack(x.shape[-1])
        accumulate(perceptual_loss(x, x_hat, feat), weights.gamma, "perc")
    if d_params is not None and weights.eta:
        accumulate(generator_adv_loss(discriminator_forward(x_hat, d_params)), weights.eta, "adv")
    return total, parts
