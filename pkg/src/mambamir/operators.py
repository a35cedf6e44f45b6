"""Acquisition physics: phantoms, Cartesian k-space sampling, fan-beam projection and FBP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# (intensity, semi-axis x, semi-axis y, center x, center y, rotation in degrees),
# modified Shepp-Logan on [-1, 1]^2 with y pointing up.
SHEPP_LOGAN = np.array([
    [1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0],
    [-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0],
    [-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0],
    [-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0],
    [0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0],
    [0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0],
    [0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0],
    [0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0],
    [0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0],
    [0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0],
])


@dataclass
class Phantom:
    image: np.ndarray
    kind: str
    seed: int


def pixel_centers(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (x, y) coordinates of pixel centers; row 0 is the top (y near +1)."""
    xs = (np.arange(w) + 0.5) * 2.0 / w - 1.0
    ys = 1.0 - (np.arange(h) + 0.5) * 2.0 / h
    return np.meshgrid(xs, ys)


def ellipse_sum(table: np.ndarray, x, y) -> np.ndarray:
    """Point evaluation of a superposition of filled ellipses."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    val = np.zeros(np.broadcast(x, y).shape)
    for amp, a, b, x0, y0, phi in table:
        t = np.deg2rad(phi)
        dx, dy = x - x0, y - y0
        xr = dx * np.cos(t) + dy * np.sin(t)
        yr = -dx * np.sin(t) + dy * np.cos(t)
        val = val + amp * ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0)
    return val


def ellipse_image(table: np.ndarray, h: int, w: int, supersample: int = 4) -> np.ndarray:
    """Pixel-area average of the ellipse sum on a supersample x supersample sub-grid."""
    k = supersample
    x, y = pixel_centers(h * k, w * k)
    return ellipse_sum(table, x, y).reshape(h, k, w, k).mean(axis=(1, 3))


def random_ellipse_table(rng: np.random.Generator) -> np.ndarray:
    """A body ellipse plus 3-8 interior structures, all inside the unit disc."""
    rows = [[rng.uniform(0.4, 0.7), rng.uniform(0.6, 0.85), rng.uniform(0.6, 0.85),
             rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-30, 30)]]
    for _ in range(int(rng.integers(3, 9))):
        r = rng.uniform(0.0, 0.45)
        ang = rng.uniform(0, 2 * np.pi)
        rows.append([rng.uniform(-0.3, 0.5), rng.uniform(0.04, 0.3), rng.uniform(0.04, 0.3),
                     r * np.cos(ang), r * np.sin(ang), rng.uniform(0, 180)])
    return np.array(rows)


def make_phantom(kind: str, h: int, w: int | None = None, seed: int = 0) -> Phantom:
    w = h if w is None else w
    if h < 16 or w < 16:
        raise ValueError(f"make_phantom: size {h}x{w} below 16x16")
    if kind == "shepp-logan":
        img = ellipse_image(SHEPP_LOGAN, h, w)
    elif kind == "random-ellipses":
        img = ellipse_image(random_ellipse_table(np.random.default_rng(seed)), h, w)
    else:
        raise ValueError(f"make_phantom: unknown kind {kind!r}")
    return Phantom(np.clip(img, 0.0, 1.0), kind, seed)


# -- MRI --------------------------------------------------------------------------

@dataclass
class MriSamplingSpec:
    """1-D Cartesian line mask over the k-space width, in centered (fftshifted) order."""

    mask: np.ndarray
    af: float
    acs: int
    seed: int

    def unshifted(self) -> np.ndarray:
        return np.fft.ifftshift(self.mask)


def make_cartesian_mask(width: int, af: float, acs_fraction: float = 0.04, seed: int = 0
                        ) -> MriSamplingSpec:
    if af < 1:
        raise ValueError(f"acceleration factor {af} < 1")
    total = math.ceil(width / af)
    acs = max(2, int(round(acs_fraction * width)))
    if af == 1:
        return MriSamplingSpec(np.ones(width, dtype=bool), af, min(acs, width), seed)
    if total < acs:
        raise ValueError(f"acceleration {af} keeps {total} of {width} lines, "
                         f"fewer than the {acs} always-sampled center lines")
    mask = np.zeros(width, dtype=bool)
    start = width // 2 - acs // 2
    mask[start:start + acs] = True
    rest = np.flatnonzero(~mask)
    rng = np.random.default_rng(seed)
    mask[rng.choice(rest, size=total - acs, replace=False)] = True
    return MriSamplingSpec(mask, af, acs, seed)


def _as_complex(x: np.ndarray) -> np.ndarray:
    return x[..., 0] + 1j * x[..., 1]


def _as_pair(z: np.ndarray, dtype) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1).astype(dtype, copy=False)


def _require_pow2(h: int, w: int) -> None:
    for n in (h, w):
        if n & (n - 1):
            raise ValueError(f"MRI operators need power-of-two extents, got {h}x{w}")


def mri_forward(x: np.ndarray, spec: MriSamplingSpec, noise_sigma: float = 0.0,
                seed: int = 0) -> np.ndarray:
    """Masked orthonormal k-space of (..., H, W, 2) images, plus noise on sampled lines."""
    _require_pow2(*x.shape[-3:-1])
    k = np.fft.fft2(_as_complex(x), axes=(-2, -1), norm="ortho")
    line = spec.unshifted()
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        k = k + noise_sigma * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    return _as_pair(k * line, x.dtype)


def mri_zero_fill(y: np.ndarray, spec: MriSamplingSpec) -> np.ndarray:
    """Adjoint of ``mri_forward`` (noise-free): inverse FFT of the masked k-space."""
    _require_pow2(*y.shape[-3:-1])
    z = np.fft.ifft2(_as_complex(y) * spec.unshifted(), axes=(-2, -1), norm="ortho")
    return _as_pair(z, y.dtype)


# -- CT -----------------------------------------------------------------------------

@dataclass
class CtGeometry:
    """Flat-detector fan beam. Distances are in the same length unit as ``pixel_pitch``."""

    n_views: int = 60
    n_detectors: int = 96
    image_size: int = 64
    source_to_center: float | None = None
    source_to_detector: float | None = None
    detector_pitch: float | None = None
    pixel_pitch: float = 1.0
    angle_offset: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = self.image_size * self.pixel_pitch
        if self.source_to_center is None:
            self.source_to_center = 2.0 * n
        if self.source_to_detector is None:
            self.source_to_detector = 4.0 * n
        half_diag = n / math.sqrt(2.0)
        if not self.source_to_detector > self.source_to_center > half_diag:
            raise ValueError("geometry needs source_to_detector > source_to_center > "
                             f"image half-diagonal ({half_diag:.2f})")
        if self.detector_pitch is None:
            fan = math.asin(half_diag / self.source_to_center)
            span = 2.0 * self.source_to_detector * math.tan(fan)
            self.detector_pitch = 1.02 * span / self.n_detectors

    @classmethod
    def full_scale(cls, n_views: int = 60) -> "CtGeometry":
        pitch = 1000.0 / 512.0 * 0.7  # ~0.7 mm pixels at 512x512
        return cls(n_views=n_views, n_detectors=736, image_size=512,
                   source_to_center=512.0, source_to_detector=1000.0, pixel_pitch=pitch)

    def with_views(self, n_views: int) -> "CtGeometry":
        return CtGeometry(n_views, self.n_detectors, self.image_size, self.source_to_center,
                          self.source_to_detector, self.detector_pitch, self.pixel_pitch,
                          self.angle_offset)

    @property
    def angles(self) -> np.ndarray:
        return self.angle_offset + 2.0 * np.pi * np.arange(self.n_views) / self.n_views

    def detector_positions(self) -> np.ndarray:
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.detector_pitch

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_detectors)

    @property
    def matrix(self) -> sp.csr_matrix:
        if "matrix" not in self._cache:
            self._cache["matrix"] = system_matrix(self)
        return self._cache["matrix"]


def _joseph_rays(sx, sy, dx, dy, n: int, pitch: float):
    """Sparse weights for rays with |dx| >= |dy|, stepping through pixel columns.

    Returns (ray, column, row_low, w_low, row_high, w_high) flat arrays in
    pixel units; rows outside the image get zero weight.
    """
    centers = (np.arange(n) - (n - 1) / 2.0) * pitch
    t = (centers[None, :] - sx[:, None]) / dx[:, None]
    y = sy[:, None] + t * dy[:, None]
    fi = (n - 1) / 2.0 - y / pitch
    i0 = np.floor(fi).astype(np.int64)
    frac = fi - i0
    seg = 1.0 / np.abs(dx)[:, None] * np.ones_like(fi)
    rays = np.repeat(np.arange(len(sx))[:, None], n, axis=1)
    cols = np.repeat(np.arange(n)[None, :], len(sx), axis=0)
    return rays, cols, i0, seg * (1.0 - frac), i0 + 1, seg * frac


def system_matrix(geom: CtGeometry) -> sp.csr_matrix:
    """Joseph-interpolated fan-beam projector as a (views*detectors, N*N) sparse matrix.

    Line integrals are measured in pixel-pitch units.
    """
    n = geom.image_size
    pp = geom.pixel_pitch
    dso, dsd = geom.source_to_center / pp, geom.source_to_detector / pp
    u = geom.detector_positions() / pp
    beta = geom.angles
    cb, sb = np.cos(beta)[:, None], np.sin(beta)[:, None]
    sx, sy = (dso * cb) * np.ones_like(u), (dso * sb) * np.ones_like(u)
    px = (dso - dsd) * cb - u[None, :] * sb
    py = (dso - dsd) * sb + u[None, :] * cb
    dx, dy = px - sx, py - sy
    norm = np.hypot(dx, dy)
    dx, dy, sx, sy = (dx / norm).ravel(), (dy / norm).ravel(), sx.ravel(), sy.ravel()
    ray_ids = np.arange(dx.size)

    rows_all, cols_all, vals_all = [], [], []
    xmajor = np.abs(dx) >= np.abs(dy)
    for major in (True, False):
        sel = xmajor if major else ~xmajor
        if not sel.any():
            continue
        if major:
            r, step_idx, lo, wlo, hi, whi = _joseph_rays(sx[sel], sy[sel], dx[sel], dy[sel], n, 1.0)
        else:
            # transpose roles: step through rows (y), interpolate along x
            r, step_idx, lo, wlo, hi, whi = _joseph_rays(-sy[sel], sx[sel], -dy[sel], dx[sel], n, 1.0)
        ray = ray_ids[sel][r]
        for idx, wt in ((lo, wlo), (hi, whi)):
            ok = (idx >= 0) & (idx < n) & (wt > 0)
            if major:
                row_i, col_i = idx[ok], step_idx[ok]
            else:
                # stepping coordinate is y' = -y -> image row; interpolated axis is x
                row_i, col_i = step_idx[ok], (n - 1) - idx[ok]
            rows_all.append(ray[ok])
            cols_all.append(row_i * n + col_i)
            vals_all.append(wt[ok])
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(dx.size, n * n))
    return mat.tocsr()


def radon_forward(x: np.ndarray, geom: CtGeometry, noise_sigma: float = 0.0,
                  seed: int = 0) -> np.ndarray:
    """Fan-beam sinogram(s) of (..., N, N) images -> (..., views, detectors)."""
    n = geom.image_size
    if x.shape[-2:] != (n, n):
        raise ValueError(f"radon_forward: image shape {x.shape} does not match geometry size {n}")
    lead = x.shape[:-2]
    flat = x.reshape(-1, n * n).astype(np.float64)
    sino = np.asarray(geom.matrix @ flat.T).T.reshape(lead + geom.sino_shape)
    if noise_sigma > 0:
        sino = sino + noise_sigma * np.random.default_rng(seed).standard_normal(sino.shape)
    return sino.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64, copy=False)


def backproject(sino: np.ndarray, geom: CtGeometry) -> np.ndarray:
    """Exact adjoint of ``radon_forward`` (transpose of the same sparse weights)."""
    if sino.shape[-2:] != geom.sino_shape:
        raise ValueError(f"backproject: sinogram shape {sino.shape} does not match {geom.sino_shape}")
    lead = sino.shape[:-2]
    n = geom.image_size
    flat = sino.reshape(-1, geom.n_views * geom.n_detectors).astype(np.float64)
    img = np.asarray(geom.matrix.T @ flat.T).T.reshape(lead + (n, n))
    return img.astype(sino.dtype if np.issubdtype(sino.dtype, np.floating) else np.float64, copy=False)


def ramp_filter(n_det: int, spacing: float, window: str = "ram-lak") -> np.ndarray:
    """Frequency response of the band-limited spatial ramp kernel, zero-padded length."""
    size = 1 << int(math.ceil(math.log2(2 * n_det)))
    k = np.arange(-(size // 2), size // 2)
    h = np.zeros(size)
    h[k == 0] = 1.0 / (4.0 * spacing ** 2)
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    resp = np.real(np.fft.fft(np.fft.ifftshift(h))) * spacing
    if window == "hann":
        f = np.fft.fftfreq(size)
        resp = resp * (0.5 + 0.5 * np.cos(2 * np.pi * f))
    elif window != "ram-lak":
        raise ValueError(f"unknown filter window {window!r}")
    return resp


def fbp(sino: np.ndarray, geom: CtGeometry, window: str = "ram-lak") -> np.ndarray:
    """Filtered backprojection for the flat-detector fan beam (full 360 degree scan)."""
    squeeze = sino.ndim == 2
    s = np.asarray(sino, dtype=np.float64).reshape((-1,) + geom.sino_shape)
    pp = geom.pixel_pitch
    dso, dsd = geom.source_to_center / pp, geom.source_to_detector / pp
    uv = geom.detector_positions() / pp * dso / dsd   # detector rescaled to the isocenter
    du = (uv[1] - uv[0]) if geom.n_detectors > 1 else 1.0
    weighted = s * (dso / np.sqrt(dso ** 2 + uv ** 2))
    resp = ramp_filter(geom.n_detectors, du, window)
    padded = np.zeros(s.shape[:-1] + (resp.size,))
    padded[..., :geom.n_detectors] = weighted
    q = np.real(np.fft.ifft(np.fft.fft(padded, axis=-1) * resp, axis=-1))[..., :geom.n_detectors]

    n = geom.image_size
    xs = (np.arange(n) - (n - 1) / 2.0)
    x, y = np.meshgrid(xs, -xs)
    out = np.zeros((s.shape[0], n, n))
    for v, beta in enumerate(geom.angles):
        cb, sb = math.cos(beta), math.sin(beta)
        depth = dso - (x * cb + y * sb)
        lateral = -x * sb + y * cb
        u_img = dso * lateral / depth
        mag = (dso / depth) ** 2
        fi = (u_img - uv[0]) / du
        i0 = np.floor(fi).astype(np.int64)
        fr = fi - i0
        valid = (i0 >= 0) & (i0 < geom.n_detectors - 1)
        i0c = np.clip(i0, 0, geom.n_detectors - 2)
        vals = q[:, v, i0c] * (1 - fr) + q[:, v, i0c + 1] * fr
        out += np.where(valid, vals, 0.0) * mag
    out *= np.pi / geom.n_views
    out = out.astype(sino.dtype if np.issubdtype(np.asarray(sino).dtype, np.floating) else np.float64)
    return out[0] if squeeze else out.reshape(np.shape(sino)[:-2] + (n, n))
