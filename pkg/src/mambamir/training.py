"""Training loop: weighted Charbonnier, transform and perceptual losses, optional GAN, Adam."""

from __future__ import annotations

import copy
import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .amss import MaskStream
from .autodiff import Tensor, backward, default_dtype, no_grad, ops
from .data import PairedSet, build_pairs, phantom_set
from .io import _fill, dump_config, parse_config, save_checkpoint
from .losses import (DiscriminatorParams, FeatureStack, LossWeights, discriminator_forward,
                     discriminator_loss, init_discriminator, total_loss)
from .metrics import compute_metrics
from .net import ModelParams, NetConfig, init_model, mambamir_forward, named_parameters
from .operators import CtGeometry
from .optim import AdamState, adam_step, collect_grads

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    modality: str = "mri"
    steps: int = 200
    batch: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    d_lr: float = 1e-3
    crop: int = 32
    gan: bool = False
    seed: int = 0
    image_size: int = 32
    phantom_kind: str = "random-ellipses"
    n_train: int = 64
    n_val: int = 8
    af: float = 8.0
    acs_fraction: float = 0.04
    views: int = 15
    full_views: int = 60
    detectors: int = 96
    noise_sigma: float = 0.0
    log_every: int = 50
    net: NetConfig = field(default_factory=NetConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.modality not in ("mri", "ct"):
            raise ValueError(f"modality must be 'mri' or 'ct', got {self.modality!r}")
        self.net.in_channels = 2 if self.modality == "mri" else 1

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        base = dict(lr=2e-5, batch=8, steps=100_000, crop=192, net=NetConfig.full_scale())
        base.update(overrides)
        return cls(**base)


def load_train_config(text: str) -> TrainConfig:
    values = parse_config(text)
    known = ({f.name for f in dataclasses.fields(TrainConfig)}
             | {f.name for f in dataclasses.fields(NetConfig)}
             | {f.name for f in dataclasses.fields(LossWeights)})
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    net = _fill(NetConfig(), values)
    weights = _fill(LossWeights(), values)
    cfg = _fill(TrainConfig(net=net, weights=weights), values)
    if "seed" in values:
        cfg.net.seed = cfg.seed
    LossWeights.__post_init__(cfg.weights)
    TrainConfig.__post_init__(cfg)
    return cfg


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, checkpoint: Path | None):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {checkpoint}")
        self.step = step
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    params: ModelParams
    cfg: TrainConfig
    history: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    d_losses: list[float] = field(default_factory=list)
    best_psnr: float = float("-inf")
    baseline_psnr: float = float("nan")
    out_dir: Path | None = None
    d_params: DiscriminatorParams | None = None


def make_datasets(cfg: TrainConfig) -> tuple[PairedSet, PairedSet]:
    kw = dict(af=cfg.af, acs_fraction=cfg.acs_fraction, mask_seed=cfg.seed, views=cfg.views,
              detectors=cfg.detectors, noise_sigma=cfg.noise_sigma)
    train_imgs = phantom_set(cfg.phantom_kind, cfg.n_train, cfg.image_size, cfg.seed * 100_003)
    val_imgs = phantom_set(cfg.phantom_kind, cfg.n_val, cfg.image_size, cfg.seed * 100_003 + 50_000)
    return (build_pairs(train_imgs, cfg.modality, noise_seed=cfg.seed, **kw),
            build_pairs(val_imgs, cfg.modality, noise_seed=cfg.seed + 1, **kw))


def predict(params: ModelParams, net_cfg: NetConfig, inputs: np.ndarray,
            stream: MaskStream | None = None, chunk: int = 8) -> np.ndarray:
    """Gradient-free forward pass over (n, h, w, c) inputs in chunks."""
    outs = []
    with no_grad():
        for i in range(0, len(inputs), chunk):
            s = stream
            if s is not None:
                s = dataclasses.replace(s, samples=tuple(range(i, min(i + chunk, len(inputs)))))
            outs.append(mambamir_forward(inputs[i:i + chunk], params, net_cfg, s).data)
    return np.concatenate(outs)


def clip_unit(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def evaluate(params: ModelParams, net_cfg: NetConfig, data: PairedSet):
    pred = predict(params, net_cfg, data.inputs, MaskStream(active=False))
    return compute_metrics(clip_unit(_mag(pred)), _mag(data.targets))


def _mag(img: np.ndarray) -> np.ndarray:
    if img.shape[-1] == 2:
        return np.hypot(img[..., 0], img[..., 1])
    return img[..., 0]


def _crop(batch_t, batch_x, size, rng):
    h, w = batch_t.shape[1:3]
    if size >= h and size >= w:
        return batch_t, batch_x
    i = int(rng.integers(0, h - size + 1))
    j = int(rng.integers(0, w - size + 1))
    return batch_t[:, i:i + size, j:j + size], batch_x[:, i:i + size, j:j + size]


def train(cfg: TrainConfig, out_dir=None, datasets: tuple[PairedSet, PairedSet] | None = None,
          callback: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Run the optimisation loop; writes checkpoints and a CSV log when ``out_dir`` is set."""
    out_dir = Path(out_dir) if out_dir is not None else None
    with default_dtype(np.float32):
        return _train(cfg, out_dir, datasets, callback)


def _train(cfg, out_dir, datasets, callback) -> TrainResult:
    train_set, val_set = datasets if datasets is not None else make_datasets(cfg)
    net_cfg = cfg.net
    params = init_model(net_cfg)
    named = dict(named_parameters(params))
    opt = AdamState()
    channels = net_cfg.in_channels
    feat = FeatureStack(channels, seed=0)
    crop = min(cfg.crop, cfg.image_size)
    geom = (CtGeometry(n_views=cfg.full_views, n_detectors=cfg.detectors, image_size=crop)
            if cfg.modality == "ct" else None)
    betas = (cfg.beta1, cfg.beta2)

    d_params = d_named = d_opt = None
    if cfg.gan:
        d_params = init_discriminator(channels, seed=cfg.seed + 1)
        d_named = dict(named_parameters(d_params))
        d_opt = AdamState()

    result = TrainResult(params=params, cfg=cfg, out_dir=out_dir, d_params=d_params)
    writer = log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(dump_config(cfg, cfg.net, cfg.weights), encoding="utf-8")
        log_fh = open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(log_fh)
        writer.writerow(["step", "loss", "psnr", "ssim"])
    w = cfg.weights
    log.info("loss weights alpha=%g beta=%g gamma=%g eta=%g epsilon=%g",
             w.alpha, w.beta, w.gamma, w.eta, w.epsilon)

    baseline = compute_metrics(clip_unit(_mag(val_set.inputs)), _mag(val_set.targets))
    result.baseline_psnr = baseline.psnr_mean
    last_good = copy.deepcopy([t.data for t in named.values()])
    last_good_path = None

    def log_point(step: int, loss: float):
        report = evaluate(params, net_cfg, val_set)
        row = {"step": step, "loss": loss, "psnr": report.psnr_mean, "ssim": report.ssim_mean}
        result.history.append(row)
        if writer is not None:
            writer.writerow([step, f"{loss:.6g}", f"{report.psnr_mean:.4f}", f"{report.ssim_mean:.4f}"])
            log_fh.flush()
        if report.psnr_mean > result.best_psnr:
            result.best_psnr = report.psnr_mean
            if out_dir is not None:
                save_checkpoint(out_dir / "best", params, net_cfg)
        log.info("step %d loss %.5f val psnr %.2f dB (input %.2f) ssim %.4f", step, loss,
                 report.psnr_mean, baseline.psnr_mean, report.ssim_mean)
        if callback is not None:
            callback(step, row)

    try:
        loss_value = float("nan")
        for step in range(cfg.steps):
            rng = np.random.default_rng([cfg.seed, step, 7])
            idx = rng.choice(len(train_set), size=min(cfg.batch, len(train_set)), replace=False)
            t_b, x_b = _crop(train_set.targets[idx], train_set.inputs[idx], crop, rng)
            stream = MaskStream(seed=cfg.seed, step=step, samples=tuple(int(i) for i in idx),
                                active=True)
            x_hat = mambamir_forward(x_b, params, net_cfg, stream)

            if cfg.gan:
                d_loss = discriminator_loss(discriminator_forward(t_b, d_params),
                                            discriminator_forward(x_hat.detach(), d_params))
                backward(d_loss)
                adam_step(d_named, collect_grads(d_named), d_opt, cfg.d_lr, betas, cfg.adam_eps)
                result.d_losses.append(float(d_loss.data))

            loss, _ = total_loss(t_b, x_hat, w, cfg.modality, geom, feat,
                                 d_params if cfg.gan else None)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                if out_dir is not None:
                    for t, saved in zip(named.values(), last_good):
                        t.data = saved
                    last_good_path = save_checkpoint(out_dir / "last_good", params, net_cfg)
                raise TrainingDiverged(step, last_good_path)
            result.losses.append(loss_value)
            backward(loss)
            grads = collect_grads(named)
            if d_named is not None:
                collect_grads(d_named)
            if adam_step(named, grads, opt, cfg.lr, betas, cfg.adam_eps):
                last_good = [t.data for t in named.values()]
            if cfg.log_every and (step + 1) % cfg.log_every == 0:
                log_point(step + 1, loss_value)
        if not result.history or result.history[-1]["step"] != cfg.steps:
            log_point(cfg.steps, loss_value)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint", params, net_cfg)
    return result
