"""Forward noising process and the x0-prediction objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .grad_core import NDValue, l1_loss, mean


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear variance schedule. Arrays are indexed by t - 1 for t in [1, T]."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def alpha_bar_at(self, t):
        """Cumulative signal fraction, with alpha_bar(0) == 1."""
        t = np.asarray(t)
        padded = np.concatenate(([1.0], self.alpha_bar))
        return padded[t]

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ConfigurationError(f"timestep outside [0, {self.T}]: {t}")
        return t


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.flags.writeable = False
    return NoiseSchedule(T, beta, alpha, alpha_bar)


@dataclass
class DiffusionSample:
    x_t: NDValue
    t: np.ndarray
    eps: NDValue


def _as_array(x):
    return x.data if isinstance(x, NDValue) else np.asarray(x)


def q_step(x_prev, t: int, sched: NoiseSchedule, rng: np.random.Generator) -> NDValue:
    """One Markov transition: sqrt(1 - beta_t) * x_prev + sqrt(beta_t) * noise."""
    if not 1 <= t <= sched.T:
        raise ConfigurationError(f"q_step: t must lie in [1, {sched.T}], got {t}")
    x = _as_array(x_prev)
    b = sched.beta[t - 1]
    noise = rng.standard_normal(x.shape)
    out = np.sqrt(1.0 - b) * x + np.sqrt(b) * noise
    return NDValue(out.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64, copy=False))


def q_sample(x0, t, eps, sched: NoiseSchedule) -> DiffusionSample:
    """Jump straight to stage t: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.

    ``t`` is a scalar or one timestep per leading-axis sample.
    """
    x = _as_array(x0)
    e = _as_array(eps)
    if x.shape != e.shape:
        raise DimensionError(f"q_sample: noise shape {e.shape} differs from signal shape {x.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ConfigurationError(f"q_sample: t must lie in [1, {sched.T}]")
    ab = sched.alpha_bar_at(t_arr)
    if t_arr.ndim == 1:
        if t_arr.shape[0] != x.shape[0]:
            raise DimensionError(f"q_sample: {t_arr.shape[0]} timesteps for {x.shape[0]} samples")
        ab = ab.reshape(-1, *([1] * (x.ndim - 1)))
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    x_t = (np.sqrt(ab) * x + np.sqrt(1.0 - ab) * e).astype(dtype, copy=False)
    return DiffusionSample(NDValue(x_t), t_arr, NDValue(e))


def sample_timesteps(batch: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. uniform integers on [1, T]."""
    if batch < 1 or T < 1:
        raise ConfigurationError("sample_timesteps: batch and T must be >= 1")
    return rng.integers(1, T + 1, size=batch)


def ddpm_loss(x0: NDValue, x_hat: NDValue) -> tuple[NDValue, NDValue]:
    """Mean absolute reconstruction error and the elementwise error map behind it."""
    error_map = l1_loss(x_hat, x0, reduce="none")
    return mean(error_map), error_map


def diffuse_trace(x0, ts, sched: NoiseSchedule, eps) -> np.ndarray:
    """Noised copies of ``x0`` at each step in ``ts`` (0 allowed), sharing one noise draw.

    Returns an array of shape ``(len(ts),) + x0.shape``; row i equals
    ``sqrt(abar) * x0 + sqrt(1 - abar) * eps`` with abar taken at ``ts[i]``, so a
    step of 0 reproduces ``x0`` exactly.
    """
    x = np.asarray(_as_array(x0))
    e = np.asarray(_as_array(eps))
    if x.shape != e.shape:
        raise DimensionError(f"diffuse_trace: noise shape {e.shape} differs from signal shape {x.shape}")
    ts = sched.check_t(np.asarray(ts, dtype=np.int64).reshape(-1))
    out = np.empty((len(ts),) + x.shape, dtype=np.result_type(x.dtype, np.float32))
    for i, t in enumerate(ts):
        ab = float(sched.alpha_bar_at(t))
        out[i] = x if t == 0 else np.sqrt(ab) * x + np.sqrt(1.0 - ab) * e
    return out
