"""Monte Carlo uncertainty maps from repeated masked forward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .amss import MaskStream
from .metrics import magnitude
from .net import ModelParams, NetConfig
from .training import predict


@dataclass
class UncertaintyMap:
    mean: np.ndarray   # (..., h, w)
    std: np.ndarray    # population std, same shape
    passes: int
    seed: int


def mc_samples(x_u: np.ndarray, params: ModelParams, cfg: NetConfig, passes: int, seed: int,
               masked: bool = True) -> np.ndarray:
    """(passes, n, h, w) reconstruction magnitudes; pass p uses mask stream step p."""
    if passes < 1:
        raise ValueError(f"need at least one pass, got {passes}")
    x_u = np.asarray(x_u, dtype=np.float32)
    single = x_u.ndim == 3
    batch = x_u[None] if single else x_u
    out = []
    for p in range(passes):
        stream = MaskStream(seed=seed, step=p, samples=(0,), active=masked)
        # float32 samples keep the float64 reduction exact when all passes agree
        out.append(magnitude(predict(params, cfg, batch, stream)).astype(np.float32))
    samples = np.stack(out)
    return samples[:, 0] if single else samples


def mc_uncertainty(x_u: np.ndarray, params: ModelParams, cfg: NetConfig, passes: int = 32,
                   seed: int = 0, masked: bool = True) -> UncertaintyMap:
    """Pixelwise mean and population std over ``passes`` stochastic reconstructions."""
    samples = mc_samples(x_u, params, cfg, passes, seed, masked).astype(np.float64)
    mean = samples.mean(axis=0)
    std = np.sqrt(np.mean((samples - mean) ** 2, axis=0))
    return UncertaintyMap(mean, std, passes, seed)
