"""PSNR / SSIM on [0, 1] images."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 100.0


def magnitude(img: np.ndarray) -> np.ndarray:
    """2-D view of an image: |re + i im| for a trailing channel pair, squeeze a single channel."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim >= 3 and img.shape[-1] == 2:
        return np.hypot(img[..., 0], img[..., 1])
    if img.ndim >= 3 and img.shape[-1] == 1:
        return img[..., 0]
    return img


def psnr(pred: np.ndarray, ref: np.ndarray, data_range: float = 1.0) -> float:
    pred, ref = np.asarray(pred, np.float64), np.asarray(ref, np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"psnr: shape mismatch {pred.shape} vs {ref.shape}")
    mse = float(np.mean((pred - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(data_range ** 2 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(pred: np.ndarray, ref: np.ndarray, data_range: float = 1.0, win: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Gaussian-window SSIM averaged over window positions fully inside the image."""
    x, y = np.asarray(pred, np.float64), np.asarray(ref, np.float64)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < win:
        raise ValueError(f"ssim: image {x.shape} smaller than the {win}x{win} window")
    g = _gaussian_window(win, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    names: list[str] = field(default_factory=list)

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def psnr_std(self) -> float:
        return float(np.std(self.psnr))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim))

    @property
    def ssim_std(self) -> float:
        return float(np.std(self.ssim))

    def add(self, name: str, p: float, s: float) -> None:
        self.names.append(name)
        self.psnr.append(p)
        self.ssim.append(s)

    def summary(self) -> str:
        return (f"psnr {self.psnr_mean:.2f} +/- {self.psnr_std:.2f} dB, "
                f"ssim {self.ssim_mean:.4f} +/- {self.ssim_std:.4f} (n={len(self.psnr)})")


def compute_metrics(pred, ref, names=None) -> MetricsReport:
    """Metrics for one image or a batch (leading axis) of images.

    Two-channel images are compared by magnitude. Inputs should already be on [0, 1].
    """
    pred, ref = np.asarray(pred), np.asarray(ref)
    if pred.shape != ref.shape:
        raise ValueError(f"compute_metrics: shape mismatch {pred.shape} vs {ref.shape}")
    p, r = magnitude(pred), magnitude(ref)
    if p.ndim == 2:
        p, r = p[None], r[None]
    report = MetricsReport()
    for i in range(p.shape[0]):
        name = names[i] if names is not None else str(i)
        report.add(name, psnr(p[i], r[i]), ssim(p[i], r[i]))
    return report
