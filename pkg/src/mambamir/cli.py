"""Command-line entry point: ``mambamir <subcommand> ...``.

Exit status: 0 success, 1 usage error (bad flags, missing files), 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .data import degrade_ct, degrade_mri, phantom_set
from .metrics import compute_metrics, magnitude
from .operators import CtGeometry, make_cartesian_mask

log = logging.getLogger("mambamir")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _inputs(path: str) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if p.is_dir():
        files = sorted(p.glob("*.mmir"))
        if not files:
            raise DataError(f"no .mmir files in {p}")
        return files
    raise UsageError(f"no such file or directory: {p}")


def _read(path: Path) -> np.ndarray:
    try:
        return io.read_tensor(path)
    except io.TensorFileError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_ckpt(path: str):
    p = Path(path)
    if not (p / io.MANIFEST).exists():
        raise UsageError(f"no checkpoint at {p}")
    try:
        return io.load_checkpoint(p)
    except (io.TensorFileError, ValueError) as exc:
        raise DataError(f"{p}: {exc}") from None


def _as_image(arr: np.ndarray, channels: int, path: Path) -> np.ndarray:
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3 or arr.shape[-1] != channels:
        raise DataError(f"{path}: expected an (h, w, {channels}) image, got shape {arr.shape}")
    return arr


# -- subcommands -----------------------------------------------------------------

def cmd_phantom(args) -> None:
    out = Path(args.out)
    imgs = phantom_set(args.kind, args.count, args.size, args.seed)
    for i, img in enumerate(imgs):
        io.write_tensor(out / f"phantom_{i:03d}.mmir", img)
    log.info("wrote %d phantoms to %s", len(imgs), out)


def cmd_simulate(args) -> None:
    out = Path(args.out)
    files = _inputs(args.inp)
    geom = spec = None
    for i, path in enumerate(files):
        img = _read(path)
        if img.ndim == 3 and img.shape[-1] == 1:
            img = img[..., 0]
        if img.ndim != 2:
            raise DataError(f"{path}: expected a 2-D phantom, got shape {img.shape}")
        img = img.astype(np.float64)
        if args.modality == "mri":
            if spec is None:
                if img.shape[0] != img.shape[1]:
                    raise DataError(f"{path}: MRI phantoms must be square, got {img.shape}")
                try:
                    spec = make_cartesian_mask(img.shape[1], args.af, args.acs, args.seed)
                except ValueError as exc:
                    raise UsageError(str(exc)) from None
                io.write_tensor(out / "mask.mmir", spec.mask.astype(np.float32))
            try:
                d = degrade_mri(img, spec, args.sigma, args.seed + i)
            except ValueError as exc:
                raise DataError(f"{path}: {exc}") from None
        else:
            if geom is None:
                geom = CtGeometry(n_views=args.views, n_detectors=args.detectors,
                                  image_size=img.shape[0])
            if img.shape != (geom.image_size, geom.image_size):
                raise DataError(f"{path}: CT phantoms must be {geom.image_size}x{geom.image_size}")
            d = degrade_ct(img, geom, args.sigma, args.seed + i)
        for name, arr in (("x", d.x), ("x_u", d.x_u), ("y", d.y)):
            io.write_tensor(out / name / path.name, arr)
    log.info("simulated %s for %d images into %s", args.modality, len(files), out)


def cmd_train(args) -> None:
    from .plotting import training_curves
    from .training import TrainingDiverged, load_train_config, train

    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        raise UsageError(f"no such config file: {cfg_path}")
    try:
        cfg = load_train_config(cfg_path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise UsageError(f"{cfg_path}: {exc}") from None
    out = Path(args.out)
    try:
        result = train(cfg, out)
    except TrainingDiverged as exc:
        raise DataError(str(exc)) from None
    training_curves(result.history, result.losses, out / "metrics.png", result.baseline_psnr)
    final = result.history[-1]
    print(f"final val psnr {final['psnr']:.2f} dB (input {result.baseline_psnr:.2f} dB), "
          f"ssim {final['ssim']:.4f}")


def cmd_reconstruct(args) -> None:
    from .amss import MaskStream
    from .training import predict

    params, cfg = _load_ckpt(args.ckpt)
    out = Path(args.out)
    for i, path in enumerate(_inputs(args.inp)):
        x_u = _as_image(_read(path), cfg.in_channels, path)
        stream = MaskStream(seed=args.seed, step=0, samples=(i,), active=args.eval_mask)
        try:
            pred = predict(params, cfg, x_u[None], stream)[0]
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        io.write_tensor(out / path.name, pred)


def cmd_uncertainty(args) -> None:
    from .plotting import image_panel
    from .uncertainty import mc_uncertainty

    if args.passes < 1:
        raise UsageError("--passes must be >= 1")
    params, cfg = _load_ckpt(args.ckpt)
    out = Path(args.out)
    for path in _inputs(args.inp):
        x_u = _as_image(_read(path), cfg.in_channels, path)
        try:
            um = mc_uncertainty(x_u, params, cfg, args.passes, args.seed)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        io.write_tensor(out / "mean" / path.name, um.mean)
        io.write_tensor(out / "std" / path.name, um.std)
        image_panel({"input": magnitude(x_u), "MC mean": um.mean, "MC std": um.std},
                    out / "figures" / f"{path.stem}.png", cmaps={"MC std": "magma"})


def cmd_eval(args) -> None:
    from .plotting import metrics_report

    preds = _inputs(args.pred)
    ref_dir = Path(args.ref)
    if not ref_dir.exists():
        raise UsageError(f"no such file or directory: {ref_dir}")
    p_list, r_list, names = [], [], []
    for path in preds:
        ref_path = ref_dir / path.name if ref_dir.is_dir() else ref_dir
        if not ref_path.exists():
            raise DataError(f"no reference for {path.name} in {ref_dir}")
        p, r = magnitude(_read(path)), magnitude(_read(ref_path))
        if p.shape != r.shape:
            raise DataError(f"{path.name}: shape {p.shape} does not match reference {r.shape}")
        p_list.append(np.clip(p, 0.0, 1.0))
        r_list.append(np.clip(r, 0.0, 1.0))
        names.append(path.stem)
    try:
        report = compute_metrics(np.stack(p_list), np.stack(r_list), names)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    rep = Path(args.report)
    rep.parent.mkdir(parents=True, exist_ok=True)
    with open(rep, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "psnr", "ssim"])
        for n, ps, ss in zip(report.names, report.psnr, report.ssim):
            w.writerow([n, f"{ps:.4f}", f"{ss:.6f}"])
        w.writerow(["mean", f"{report.psnr_mean:.4f}", f"{report.ssim_mean:.6f}"])
        w.writerow(["std", f"{report.psnr_std:.4f}", f"{report.ssim_std:.6f}"])
    metrics_report(report.names, report.psnr, report.ssim, rep.with_suffix(".png"))
    print(report.summary())


def cmd_export_pgm(args) -> None:
    path = Path(args.inp)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        data = io.to_pgm(_read(path))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mambamir", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic phantom set")
    p.add_argument("--kind", default="random-ellipses", choices=["shepp-logan", "random-ellipses"])
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="degrade phantoms (emits x, x_u, y)")
    sim = p.add_subparsers(dest="modality", required=True, parser_class=_Parser)
    m = sim.add_parser("mri")
    m.add_argument("--af", type=float, default=8.0)
    m.add_argument("--acs", type=float, default=0.04, help="fraction of center lines always sampled")
    c = sim.add_parser("ct")
    c.add_argument("--views", type=int, default=15)
    c.add_argument("--detectors", type=int, default=96)
    for q in (m, c):
        q.add_argument("--sigma", type=float, default=0.0)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--in", dest="inp", required=True)
        q.add_argument("--out", required=True)
        q.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train from a key = value config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="run a checkpoint on degraded inputs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-mask", action="store_true", help="keep scan masking on at inference")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("uncertainty", help="Monte Carlo mean/std maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--passes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("eval", help="PSNR/SSIM report of predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-pgm", help="write an 8-bit binary PGM")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_pgm)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"mambamir: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"mambamir: data error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
