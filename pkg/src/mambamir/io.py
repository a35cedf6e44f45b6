"""On-disk formats: .mmir tensor files, checkpoints, key = value configs, PGM export."""

from __future__ import annotations

import dataclasses
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MMIR"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBBB")


class TensorFileError(ValueError):
    pass


def tensor_bytes(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim > 255:
        raise TensorFileError(f"too many dimensions: {arr.ndim}")
    payload = np.ascontiguousarray(arr, dtype="<f4")
    head = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + payload.tobytes()


def parse_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise TensorFileError("truncated header")
    magic, version, dtype, ndim, reserved = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TensorFileError(f"bad magic {magic!r}")
    if version != VERSION or dtype != DTYPE_F32 or reserved != 0:
        raise TensorFileError(f"unsupported header (version={version}, dtype={dtype}, reserved={reserved})")
    off = _HEADER.size
    if len(buf) < off + 4 * ndim:
        raise TensorFileError("truncated extents")
    shape = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(buf) - off != 4 * count:
        raise TensorFileError(f"payload has {len(buf) - off} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path, arr) -> None:
    _atomic_write(Path(path), tensor_bytes(arr))


def read_tensor(path) -> np.ndarray:
    return parse_tensor(Path(path).read_bytes())


# -- checkpoints ------------------------------------------------------------------

MANIFEST = "manifest.txt"


def save_checkpoint(directory, params, net_cfg) -> Path:
    """One .mmir per named parameter plus a manifest of NetConfig keys."""
    from .net import named_parameters

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for name, t in named_parameters(params):
        write_tensor(directory / f"{name}.mmir", t.data)
        names.append(name)
    lines = [f"{f.name} = {_format(getattr(net_cfg, f.name))}" for f in dataclasses.fields(net_cfg)]
    lines += [f"param = {n}" for n in names]
    _atomic_write(directory / MANIFEST, ("\n".join(lines) + "\n").encode("utf-8"))
    return directory


def load_checkpoint(directory):
    """Rebuild (params, net_cfg) from a checkpoint directory."""
    from .autodiff import default_dtype
    from .net import NetConfig, init_model, named_parameters

    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"no checkpoint manifest in {directory}")
    values = {}
    stored = []
    for key, value in _iter_pairs(manifest.read_text(encoding="utf-8")):
        if key == "param":
            stored.append(value)
        else:
            values[key] = value
    cfg = _fill(NetConfig(), values)
    with default_dtype(np.float32):
        params = init_model(cfg)
    for name, t in named_parameters(params):
        if name not in stored:
            raise TensorFileError(f"checkpoint is missing parameter {name}")
        arr = read_tensor(directory / f"{name}.mmir")
        if arr.shape != t.shape:
            raise TensorFileError(f"parameter {name}: stored shape {arr.shape} != expected {t.shape}")
        t.data = arr
    return params, cfg


# -- key = value configs ---------------------------------------------------------

def _iter_pairs(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        yield key, value


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(value: str, current):
    if isinstance(current, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def _fill(obj, values: dict):
    for f in dataclasses.fields(obj):
        if f.name in values:
            setattr(obj, f.name, _coerce(values[f.name], getattr(obj, f.name)))
    return obj


def parse_config(text: str) -> dict[str, str]:
    return dict(_iter_pairs(text))


def dump_config(*objs) -> str:
    lines = []
    seen = set()
    for obj in objs:
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value) or f.name in seen:
                continue
            seen.add(f.name)
            lines.append(f"{f.name} = {_format(value)}")
    return "\n".join(lines) + "\n"


# -- PGM -----------------------------------------------------------------------------

def to_pgm(image: np.ndarray) -> bytes:
    """8-bit binary graymap, min-max scaled; a constant image maps to 0."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 2:
        img = np.hypot(img[..., 0], img[..., 1])
    elif img.ndim == 3 and img.shape[-1] == 1:
        img = img[..., 0]
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D image, got shape {image.shape}")
    lo, hi = img.min(), img.max()
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo) * 255.0
    pix = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    h, w = pix.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()
