"""Synthetic phantom datasets and their degraded network inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import (CtGeometry, MriSamplingSpec, fbp, make_cartesian_mask, make_phantom,
                        mri_forward, mri_zero_fill, radon_forward)


def scale_by_max_magnitude(img: np.ndarray) -> np.ndarray:
    """Divide a (h, w, c) image by its largest pixel magnitude (complex pairs use |z|)."""
    mag = np.hypot(img[..., 0], img[..., 1]) if img.shape[-1] == 2 else np.abs(img[..., 0])
    peak = mag.max()
    return img / peak if peak > 0 else img


def min_max(img: np.ndarray) -> np.ndarray:
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)


def as_complex_pair(img: np.ndarray) -> np.ndarray:
    return np.stack([img, np.zeros_like(img)], axis=-1)


@dataclass
class Degraded:
    x: np.ndarray     # target, (h, w, c) on [0, 1]
    x_u: np.ndarray   # network input, (h, w, c) on [0, 1]
    y: np.ndarray     # measurements: k-space (h, w, 2) or sinogram (views, detectors)


def degrade_mri(image: np.ndarray, spec: MriSamplingSpec, noise_sigma: float = 0.0,
                seed: int = 0) -> Degraded:
    x = scale_by_max_magnitude(as_complex_pair(image))
    y = mri_forward(x, spec, noise_sigma, seed)
    return Degraded(x, scale_by_max_magnitude(mri_zero_fill(y, spec)), y)


def degrade_ct(image: np.ndarray, geom: CtGeometry, noise_sigma: float = 0.0,
               seed: int = 0) -> Degraded:
    x = scale_by_max_magnitude(image[..., None])
    y = radon_forward(x[..., 0], geom, noise_sigma, seed)
    return Degraded(x, min_max(fbp(y, geom))[..., None], y)


def phantom_set(kind: str, count: int, size: int, seed: int) -> np.ndarray:
    """``count`` phantoms with per-image seeds seed, seed+1, ..."""
    return np.stack([make_phantom(kind, size, size, seed + i).image for i in range(count)])


@dataclass
class PairedSet:
    targets: np.ndarray   # (n, h, w, c)
    inputs: np.ndarray    # (n, h, w, c)

    def __len__(self) -> int:
        return len(self.targets)


def build_pairs(images: np.ndarray, modality: str, *, af: float = 8, acs_fraction: float = 0.04,
                mask_seed: int = 0, views: int = 15, detectors: int = 96,
                noise_sigma: float = 0.0, noise_seed: int = 0) -> PairedSet:
    size = images.shape[-1]
    if modality == "mri":
        spec = make_cartesian_mask(size, af, acs_fraction, mask_seed)
        items = [degrade_mri(im, spec, noise_sigma, noise_seed + i) for i, im in enumerate(images)]
    elif modality == "ct":
        geom = CtGeometry(n_views=views, n_detectors=detectors, image_size=size)
        items = [degrade_ct(im, geom, noise_sigma, noise_seed + i) for i, im in enumerate(images)]
    else:
        raise ValueError(f"unknown modality {modality!r}")
    return PairedSet(np.stack([d.x for d in items]).astype(np.float32),
                     np.stack([d.x_u for d in items]).astype(np.float32))
