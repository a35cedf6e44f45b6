"""Figures written next to the CSV/tensor outputs of the CLI."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def training_curves(history: list[dict], losses: list[float], path, baseline_psnr=None) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.6))
        if losses:
            ax1.plot(np.arange(1, len(losses) + 1), losses, lw=0.6, color="0.4")
        ax1.set_xlabel("step")
        ax1.set_ylabel("training loss")
        ax1.set_yscale("log")
        steps = [row["step"] for row in history]
        ax2.plot(steps, [row["psnr"] for row in history], marker="o", ms=3, label="reconstruction")
        if baseline_psnr is not None:
            ax2.axhline(baseline_psnr, color="C3", ls="--", lw=1, label="degraded input")
        ax2.set_xlabel("step")
        ax2.set_ylabel("validation PSNR (dB)")
        ax2.legend(frameon=False)
        return _save(fig, path)


def metrics_report(names, psnr, ssim, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.6))
        pos = np.arange(len(names))
        ax1.bar(pos, psnr, color="C0")
        ax1.set_ylabel("PSNR (dB)")
        ax2.bar(pos, ssim, color="C1")
        ax2.set_ylabel("SSIM")
        ax2.set_ylim(min(0.0, min(ssim, default=0.0)), 1.0)
        for ax in (ax1, ax2):
            ax.set_xticks(pos)
            ax.set_xticklabels(names, rotation=60, ha="right")
        return _save(fig, path)


def image_panel(images: dict[str, np.ndarray], path, cmaps: dict[str, str] | None = None) -> Path:
    """A row of grayscale panels (e.g. input / mean / std)."""
    cmaps = cmaps or {}
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(images), figsize=(2.2 * len(images), 2.4))
        axes = np.atleast_1d(axes)
        for ax, (title, img) in zip(axes, images.items()):
            im = ax.imshow(img, cmap=cmaps.get(title, "gray"))
            ax.set_title(title)
            ax.set_axis_off()
            if title in cmaps:
                fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        return _save(fig, path)
