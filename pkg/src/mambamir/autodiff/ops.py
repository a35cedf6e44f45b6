"""Differentiable primitives.

Every function takes Tensors (or array-likes, promoted to constants) and
returns a Tensor whose tape node carries the matching vector-Jacobian product.
Images are NHWC; complex images carry a trailing (real, imag) channel pair.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("div", out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record("neg", -a.data, (a,), lambda g: (-g,))


# -- elementwise unary -------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return record("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return record("silu", x.data * s, (x,),
                  lambda g: (g * (s * (1 + x.data * (1 - s))),))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    with np.errstate(over="ignore"):
        out = np.where(d > 20, d, np.log1p(np.exp(np.minimum(d, 20)))).astype(d.dtype, copy=False)
    return record("softplus", out, (x,), lambda g: (g * _sigmoid(d),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return record("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return record("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return record("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def abs(x) -> Tensor:
    x = as_tensor(x)
    return record("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return record("square", x.data * x.data, (x,), lambda g: (2 * g * x.data,))


# -- reductions --------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", np.asarray(out), (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (b may be 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return record("matmul", out, (a, b), vjp)


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """NHWC convolution; weights are (kh, kw, cin // groups, cout)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, cg, cout = w.shape
    if cin % groups or cout % groups or cg != cin // groups:
        raise ValueError(
            f"conv2d: input {x.shape} and weight {w.shape} inconsistent with groups={groups}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {w.shape[:2]} larger than padded input {(hp, wp)}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    cog = cout // groups
    depthwise = cg == 1 and cog == 1
    wgrp = w.data.reshape(kh, kw, cg, groups, cog)

    def window(arr, i, j):
        return arr[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]

    out = np.zeros((n, ho, wo, cout), dtype=np.result_type(x.data, w.data))
    for i in range(kh):
        for j in range(kw):
            xs = window(xp, i, j)
            if groups == 1:
                out += xs @ w.data[i, j]
            elif depthwise:
                out += xs * w.data[i, j, 0]
            else:
                out += np.einsum("nhwgc,cgo->nhwgo", xs.reshape(n, ho, wo, groups, cg),
                                 wgrp[i, j]).reshape(n, ho, wo, cout)

    def vjp(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        g_grp = g.reshape(n, ho, wo, groups, cog)
        for i in range(kh):
            for j in range(kw):
                xs = window(xp, i, j)
                if groups == 1:
                    if gw is not None:
                        gw[i, j] = xs.reshape(-1, cin).T @ g.reshape(-1, cout)
                    if gxp is not None:
                        window(gxp, i, j)[...] += g @ w.data[i, j].T
                elif depthwise:
                    if gw is not None:
                        gw[i, j, 0] = (xs * g).sum(axis=(0, 1, 2))
                    if gxp is not None:
                        window(gxp, i, j)[...] += g * w.data[i, j, 0]
                else:
                    xg = xs.reshape(n, ho, wo, groups, cg)
                    if gw is not None:
                        gw[i, j] = np.einsum("nhwgc,nhwgo->cgo", xg, g_grp).reshape(cg, cout)
                    if gxp is not None:
                        window(gxp, i, j)[...] += np.einsum(
                            "nhwgo,cgo->nhwgc", g_grp, wgrp[i, j]).reshape(n, ho, wo, cin)
        gx = None
        if gxp is not None:
            gx = gxp[:, padding:padding + h, padding:padding + wd, :] if padding else gxp
        return gx, gw

    y = record("conv2d", out, (x, w), vjp)
    return y if bias is None else add(y, bias)


# -- normalization -------------------------------------------------------------

def layernorm(x, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; zero output where the variance is < 1e-12."""
    x = as_tensor(x)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = np.where(var < 1e-12, 0.0, 1.0 / np.sqrt(var + eps)).astype(d.dtype, copy=False)
    y = xc * rstd

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (rstd * (g - gm - y * gym),)

    return record("layernorm", y, (x,), vjp)


# -- shape and indexing --------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ValueError(f"permute: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return record("permute", np.transpose(x.data, axes), (x,),
                  lambda g: (np.transpose(g, inverse),))


def unsqueeze(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return reshape(x, np.expand_dims(x.data, axis).shape)


def getitem(x, index) -> Tensor:
    """Basic slicing (ints, slices, Ellipsis, None)."""
    x = as_tensor(x)
    out = x.data[index]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[index] += g
        return (gx,)

    return record("slice", np.array(out), (x,), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record("concat", out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)))


def take(x, index, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    out = np.take(x.data, index, axis=axis)
    flat = index.reshape(-1)
    order = np.argsort(flat, kind="stable")
    targets, starts = np.unique(flat[order], return_index=True)
    lead = (slice(None),) * axis

    def vjp(g):
        gx = np.zeros_like(x.data)
        g = g.reshape(x.shape[:axis] + (flat.size,) + x.shape[axis + 1:])
        if targets.size == flat.size:
            gx[lead + (flat,)] = g
        else:
            sums = np.add.reduceat(np.take(g, order, axis=axis), starts, axis=axis)
            gx[lead + (targets,)] = sums
        return (gx,)

    return record("take", out, (x,), vjp)


def pixel_shuffle(x, r: int) -> Tensor:
    """Depth-to-space: (N, H, W, C*r*r) -> (N, H*r, W*r, C)."""
    x = as_tensor(x)
    n, h, w, crr = x.shape
    if crr % (r * r):
        raise ValueError(f"pixel_shuffle: channels {crr} not divisible by {r * r}")
    c = crr // (r * r)
    y = reshape(x, (n, h, w, r, r, c))
    y = permute(y, (0, 1, 3, 2, 4, 5))
    return reshape(y, (n, h * r, w * r, c))


# -- linear operators ----------------------------------------------------------

def _check_pow2(shape, axes) -> None:
    for a in axes:
        n = shape[a]
        if n < 1 or n & (n - 1):
            raise ValueError(f"fft2: extent {n} on axis {a} is not a power of two (shape {shape})")


def _fft_pair(d: np.ndarray, inverse: bool) -> np.ndarray:
    z = d[..., 0] + 1j * d[..., 1]
    f = np.fft.ifft2 if inverse else np.fft.fft2
    z = f(z, axes=(-2, -1), norm="ortho")
    return np.stack([z.real, z.imag], axis=-1).astype(d.dtype, copy=False)


def fft2(x) -> Tensor:
    """Orthonormal 2-D DFT of (..., H, W, 2) complex pairs over H and W."""
    x = as_tensor(x)
    if x.ndim < 3 or x.shape[-1] != 2:
        raise ValueError(f"fft2: expected trailing (real, imag) pair, got shape {x.shape}")
    _check_pow2(x.shape, (-3, -2))
    return record("fft2", _fft_pair(x.data, False), (x,), lambda g: (_fft_pair(g, True),))


def ifft2(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim < 3 or x.shape[-1] != 2:
        raise ValueError(f"ifft2: expected trailing (real, imag) pair, got shape {x.shape}")
    _check_pow2(x.shape, (-3, -2))
    return record("ifft2", _fft_pair(x.data, True), (x,), lambda g: (_fft_pair(g, False),))


def linear_map(x, matrix, out_shape: tuple[int, ...]) -> Tensor:
    """Apply a (sparse or dense) matrix to each batch item of ``x``.

    ``x`` has shape (B, *in_shape) and is flattened row-major per item; the
    backward pass applies the transpose, so the pair is an exact adjoint.
    """
    x = as_tensor(x)
    b = x.shape[0]
    flat = x.data.reshape(b, -1)
    if flat.shape[1] != matrix.shape[1]:
        raise ValueError(f"linear_map: input {x.shape} does not match operator {matrix.shape}")
    out = np.asarray(matrix @ flat.T).T.astype(x.dtype, copy=False).reshape((b,) + tuple(out_shape))

    def vjp(g):
        gx = np.asarray(matrix.T @ g.reshape(b, -1).T).T
        return (gx.astype(x.dtype, copy=False).reshape(x.shape),)

    return record("linear_map", out, (x,), vjp)


def linear_recurrence(a, b) -> Tensor:
    """h_k = a_k * h_{k-1} + b_k along axis 1, with h_0 = 0.

    ``a`` and ``b`` share shape (S, L, ...). Returns every h_k.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim < 2:
        raise ValueError(f"linear_recurrence: shape mismatch {a.shape} vs {b.shape}")
    at = np.ascontiguousarray(np.moveaxis(a.data, 1, 0))
    bt = np.ascontiguousarray(np.moveaxis(b.data, 1, 0))
    length = at.shape[0]
    ht = np.empty_like(bt)
    h = np.zeros_like(bt[0])
    for k in range(length):
        h = at[k] * h + bt[k]
        ht[k] = h

    def vjp(g):
        gt = np.moveaxis(g, 1, 0)
        s = np.empty_like(ht)
        carry = np.zeros_like(ht[0])
        for k in range(length - 1, -1, -1):
            carry = gt[k] + carry
            s[k] = carry
            carry = carry * at[k]
        ga = None
        if a.requires_grad:
            ga_t = np.zeros_like(s)
            ga_t[1:] = s[1:] * ht[:-1]
            ga = np.moveaxis(ga_t, 0, 1)
        gb = np.moveaxis(s, 0, 1) if b.requires_grad else None
        return ga, gb

    return record("linear_recurrence", np.moveaxis(ht, 0, 1), (a, b), vjp)


def maximum_const(x, c: float) -> Tensor:
    x = as_tensor(x)
    return record("maximum", np.maximum(x.data, c), (x,), lambda g: (g * (x.data > c),))

