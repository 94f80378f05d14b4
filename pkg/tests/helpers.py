"""Finite-difference gradient checking and small fixtures shared by the tests."""
from __future__ import annotations

import numpy as np
import pytest

from diffe.grad_core import NDValue, Tape, backward

FD_STEP = 1e-4
ACCEPTANCE_LINES = pytest.StashKey[list]()


def analytic_grads(loss_fn, leaves):
    for v in leaves:
        v.grad = None
    with Tape() as tape:
        out = loss_fn()
    backward(out, tape)
    return [np.zeros_like(v.data) if v.grad is None else v.grad.copy() for v in leaves]


def numeric_grad(loss_fn, leaf: NDValue, coords=None, h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``leaf`` at the given flat coordinates."""
    flat = leaf.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        up = float(loss_fn().data)
        flat[i] = orig - h
        down = float(loss_fn().data)
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return out.reshape(leaf.shape)


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-relative error; ``floor`` keeps exactly-zero gradients from amplifying round-off."""
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def grad_check(loss_fn, leaves, max_coords: int | None = None, rng=None) -> float:
    """Worst relative error over ``leaves``; optionally on a random subset of coordinates."""
    rng = np.random.default_rng(rng)
    grads = analytic_grads(loss_fn, leaves)
    worst = 0.0
    for v, g in zip(leaves, grads):
        n = v.data.size
        if max_coords is None or n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, max_coords, replace=False)
        num = numeric_grad(loss_fn, v, coords)
        worst = max(worst, rel_error(g.reshape(-1)[coords], num.reshape(-1)[coords]))
    return worst


def leaf(rng, *shape, scale=1.0) -> NDValue:
    return NDValue(scale * rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def projected(out: NDValue, weights: np.ndarray) -> NDValue:
    """Scalar mean(out * weights) built from differentiable ops."""
    from diffe.grad_core import mean, mul

    return mean(mul(out, NDValue(weights, dtype=np.float64)))


def class_contrast(data):
    """Class-mean power spectra, each bin divided by its median over classes."""
    n = data.epochs.shape[-1]
    f = np.fft.rfftfreq(n, 1.0 / data.fs)
    spec = np.abs(np.fft.rfft(data.epochs.astype(np.float64) * np.hanning(n), axis=-1)) ** 2
    per_class = np.stack([spec[data.labels == k].mean(axis=(0, 1)) for k in np.unique(data.labels)])
    return per_class / np.median(per_class, axis=0), f


def naive_raw_accuracy(raw, split_):
    """Least squares on channel-averaged log variance of unfiltered epochs."""
    from diffe.data import least_squares_fit

    feats = np.log(raw.epochs.astype(np.float64).var(axis=-1).mean(axis=-1) + 1e-12)[:, None]
    predict = least_squares_fit(feats[split_.train], raw.labels[split_.train])
    return float(np.mean(predict(feats[split_.test]) == raw.labels[split_.test]))
