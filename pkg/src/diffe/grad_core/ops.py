"""Differentiable primitives.

Every function takes and returns ``NDValue``. Layouts are channels-first:
``(C, L)`` for a single signal or ``(B, C, L)`` for a batch. Each op computes
its forward result with numpy and, when a tape is active and any input needs
a gradient, logs a closure that maps the output gradient to input gradients.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, DimensionError
from .value import NDValue, record


def _batched(x: NDValue, name: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x.data[None], True
    if x.ndim == 3:
        return x.data, False
    raise DimensionError(f"{name}: expected (C, L) or (B, C, L), got shape {x.shape}")


def _same_shape(a: NDValue, b: NDValue, name: str) -> None:
    if a.shape != b.shape:
        for axis, (m, n) in enumerate(zip(a.shape, b.shape)):
            if m != n:
                raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ on axis {axis}")
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ in rank")


def _valid_range(j: int, stride: int, padding: int, length: int, l_out: int) -> tuple[int, int]:
    """Output positions i whose tap j reads a real (unpadded) sample i*stride + j - padding."""
    lo = max(0, -(-(padding - j) // stride))
    hi = min(l_out, (length - 1 - j + padding) // stride + 1)
    return lo, hi


def _im2col(xd: np.ndarray, k: int, stride: int, padding: int, l_out: int) -> np.ndarray:
    b, c, length = xd.shape
    cols = np.empty((b, c, k, l_out), dtype=xd.dtype)
    for j in range(k):
        lo, hi = _valid_range(j, stride, padding, length, l_out)
        cols[:, :, j, :lo] = 0
        cols[:, :, j, hi:] = 0
        if hi > lo:
            start = lo * stride + j - padding
            cols[:, :, j, lo:hi] = xd[:, :, start:start + (hi - lo - 1) * stride + 1:stride]
    return cols.reshape(b, c * k, l_out)


def _col2im(dcols: np.ndarray, length: int, stride: int, padding: int) -> np.ndarray:
    b, c, k, l_out = dcols.shape
    gx = np.zeros((b, c, length), dtype=dcols.dtype)
    for j in range(k):
        lo, hi = _valid_range(j, stride, padding, length, l_out)
        if hi > lo:
            start = lo * stride + j - padding
            gx[:, :, start:start + (hi - lo - 1) * stride + 1:stride] += dcols[:, :, j, lo:hi]
    return gx


# -- elementwise -------------------------------------------------------------

def add(a: NDValue, b: NDValue) -> NDValue:
    _same_shape(a, b, "add")
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: NDValue, b: NDValue) -> NDValue:
    _same_shape(a, b, "sub")
    return record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: NDValue, b: NDValue) -> NDValue:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: NDValue, c: float) -> NDValue:
    return record("scale", (a,), a.data * a.data.dtype.type(c), lambda g: (g * c,))


def elu(x: NDValue, a: float = 1.0) -> NDValue:
    xd = x.data
    neg = np.minimum(xd, 0)
    e = np.exp(neg)
    out = np.maximum(xd, 0)
    out += a * (e - 1)
    # d/dx = 1 on the positive side, a * exp(x) on the negative side
    deriv = np.where(xd > 0, 1, a * e).astype(xd.dtype, copy=False)
    return record("elu", (x,), out, lambda g: (g * deriv,))


def mean(x: NDValue) -> NDValue:
    n = x.data.size
    shape, dtype = x.shape, x.dtype
    return record("mean", (x,), np.asarray(x.data.mean(dtype=dtype)),
                  lambda g: (np.full(shape, g / n, dtype=dtype),))


def reshape(x: NDValue, shape: Sequence[int]) -> NDValue:
    src = x.shape
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(src),))


# -- layers ------------------------------------------------------------------

def conv1d(x: NDValue, weight: NDValue, bias: NDValue | None = None,
           stride: int = 1, padding: int = 0) -> NDValue:
    """1-D cross-correlation (no kernel flip) over the last axis."""
    xd, squeeze = _batched(x, "conv1d")
    if weight.ndim != 3:
        raise DimensionError(f"conv1d: weight must be (C_out, C_in, K), got {weight.shape}")
    c_out, c_in, k = weight.shape
    b, c, length = xd.shape
    if c != c_in:
        raise DimensionError(f"conv1d: input channel axis has {c}, weight expects {c_in}")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"conv1d: stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    if k > length + 2 * padding:
        raise DimensionError(f"conv1d: kernel {k} longer than padded length axis {length + 2 * padding}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv1d: bias must have shape ({c_out},), got {bias.shape}")

    l_out = (length + 2 * padding - k) // stride + 1
    cols = _im2col(xd, k, stride, padding, l_out)
    wm = weight.data.reshape(c_out, c_in * k)
    out = np.matmul(wm, cols)
    if bias is not None:
        out += bias.data[:, None]
    if squeeze:
        out = out[0]

    x_needs = x.requires_grad
    w_needs = weight.requires_grad

    def back(g):
        g3 = g[None] if squeeze else g
        gw = gb = gx = None
        if w_needs:
            gw = np.zeros((c_out, c_in * k), dtype=g3.dtype)
            for i in range(b):
                gw += g3[i] @ cols[i].T
            gw = gw.reshape(c_out, c_in, k)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        if x_needs:
            dcols = np.matmul(wm.T, g3).reshape(b, c_in, k, l_out)
            gx = _col2im(dcols, length, stride, padding)
            if squeeze:
                gx = gx[0]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record("conv1d", inputs, out, back)


def group_norm(x: NDValue, groups: int, gamma: NDValue, beta: NDValue, eps: float = 1e-5) -> NDValue:
    """Normalize each group of channels over (channels-in-group, length), then scale/shift per channel."""
    xd, squeeze = _batched(x, "group_norm")
    b, c, length = xd.shape
    if groups < 1 or c % groups:
        raise ConfigurationError(f"group_norm: {c} channels not divisible into {groups} groups")
    if eps <= 0:
        raise ConfigurationError("group_norm: eps must be positive")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: gamma/beta must have shape ({c},)")

    xr = xd.reshape(b, groups, -1)
    mu = xr.mean(axis=-1, keepdims=True)
    centered = xr - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (centered * rstd).reshape(b, c, length)
    gd = gamma.data[:, None]
    out = xhat * gd + beta.data[:, None]
    if squeeze:
        out = out[0]

    def back(g):
        g3 = g[None] if squeeze else g
        ggamma = (g3 * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
        gbeta = g3.sum(axis=(0, 2)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = (g3 * gd).reshape(b, groups, -1)
            xh = xhat.reshape(b, groups, -1)
            gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                         - xh * (dxhat * xh).mean(axis=-1, keepdims=True))
            gx = gx.reshape(b, c, length)
            if squeeze:
                gx = gx[0]
        return gx, ggamma, gbeta

    return record("group_norm", (x, gamma, beta), out, back)


def affine(x: NDValue, weight: NDValue, bias: NDValue | None = None) -> NDValue:
    """``weight @ x + bias`` for a vector, or row-wise for a (B, N) batch."""
    if weight.ndim != 2:
        raise DimensionError(f"affine: weight must be (M, N), got {weight.shape}")
    m, n = weight.shape
    if x.ndim not in (1, 2) or x.shape[-1] != n:
        raise DimensionError(f"affine: input last axis is {x.shape[-1] if x.ndim else None}, weight expects {n}")
    if bias is not None and bias.shape != (m,):
        raise DimensionError(f"affine: bias must have shape ({m},), got {bias.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        gx = g @ wd if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = np.outer(g, xd) if xd.ndim == 1 else g.T @ xd
        gb = None
        if bias is not None and bias.requires_grad:
            gb = g if g.ndim == 1 else g.sum(axis=0)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record("affine", inputs, out, back)


def adaptive_avg_pool(x: NDValue, target_len: int) -> NDValue:
    """Average bin i over [floor(i*L/n), ceil((i+1)*L/n)) along the last axis."""
    xd, squeeze = _batched(x, "adaptive_avg_pool")
    length = xd.shape[-1]
    if target_len < 1:
        raise ConfigurationError(f"adaptive_avg_pool: target_len must be >= 1, got {target_len}")
    if target_len > length:
        raise ConfigurationError(f"adaptive_avg_pool: target_len {target_len} exceeds length {length}")
    bounds = [(i * length // target_len, -((-(i + 1) * length) // target_len)) for i in range(target_len)]
    if length % target_len == 0:
        out = xd.reshape(*xd.shape[:-1], target_len, -1).mean(axis=-1)
    else:
        out = np.stack([xd[..., s:e].mean(axis=-1) for s, e in bounds], axis=-1)
    if squeeze:
        out = out[0]

    def back(g):
        g3 = g[None] if squeeze else g
        gx = np.zeros_like(xd)
        for i, (s, e) in enumerate(bounds):
            gx[..., s:e] += g3[..., i:i + 1] / (e - s)
        return (gx[0] if squeeze else gx,)

    return record("adaptive_avg_pool", (x,), out, back)


def l1_loss(pred: NDValue, target: NDValue, reduce: str = "mean") -> NDValue:
    _same_shape(pred, target, "l1_loss")
    if reduce not in ("mean", "none"):
        raise ConfigurationError(f"l1_loss: reduce must be 'mean' or 'none', got {reduce!r}")
    diff = pred.data - target.data
    sign = np.sign(diff)
    if reduce == "none":
        return record("l1_none", (pred, target), np.abs(diff), lambda g: (g * sign, -g * sign))
    n = diff.size
    out = np.asarray(np.abs(diff).mean(dtype=diff.dtype))

    def back(g):
        gp = sign * (g / n)
        return gp, -gp

    return record("l1_mean", (pred, target), out, back)


def mse_loss(pred: NDValue, target: NDValue) -> NDValue:
    _same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.mean(diff * diff, dtype=diff.dtype))

    def back(g):
        gp = diff * (2.0 * g / n)
        return gp, -gp

    return record("mse", (pred, target), out, back)


# -- structural helpers used by the networks ---------------------------------

def add_channel_bias(x: NDValue, bias: NDValue) -> NDValue:
    """Add a per-sample, per-channel offset: (B, C, L) + (B, C)."""
    if x.ndim != 3 or bias.shape != x.shape[:2]:
        raise DimensionError(f"add_channel_bias: cannot add {bias.shape} to {x.shape}")
    out = x.data + bias.data[:, :, None]
    return record("add_channel_bias", (x, bias), out, lambda g: (g, g.sum(axis=2)))


def concat(values: Sequence[NDValue], axis: int = 1) -> NDValue:
    arrays = [v.data for v in values]
    ref = arrays[0].shape
    ax = axis % len(ref)
    for a in arrays[1:]:
        if len(a.shape) != len(ref) or any(a.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shape {a.shape} incompatible with {ref} along axis {ax}")
    splits = np.cumsum([a.shape[ax] for a in arrays])[:-1]
    out = np.concatenate(arrays, axis=ax)
    return record("concat", tuple(values), out, lambda g: tuple(np.split(g, splits, axis=ax)))


def upsample_nearest(x: NDValue, factor: int = 2) -> NDValue:
    xd = x.data
    out = np.repeat(xd, factor, axis=-1)
    shape = xd.shape
    return record("upsample", (x,), out,
                  lambda g: (g.reshape(*shape, factor).sum(axis=-1),))
