"""EEG preprocessing: band-pass, notch, common average reference, high-gamma
selection, then epoching with baseline correction.

Filters are zero-phase (forward-backward) and operate channel by channel in
float64, writing back in the recording's dtype so hour-long 64-channel
recordings fit in memory as float32.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import ConfigurationError, DataError

log = logging.getLogger(__name__)

HIGH_GAMMA = (70.0, 125.0)
EDGE_LIMIT = 0.95


@dataclass
class Recording:
    data: np.ndarray  # (channels, samples)
    fs: float
    channel_names: list[str] | None = None

    def __post_init__(self):
        if self.fs <= 0:
            raise ConfigurationError(f"sampling rate must be positive, got {self.fs}")
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise DataError(f"recording data must be (channels, samples), got {self.data.shape}")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def replace(self, data: np.ndarray) -> "Recording":
        return Recording(data, self.fs, self.channel_names)


@dataclass
class EventList:
    samples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.shape != self.labels.shape:
            raise DataError("event samples and labels must have equal length")
        if np.any(np.diff(self.samples) <= 0):
            raise DataError("event sample indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class EpochSet:
    epochs: np.ndarray  # (trials, channels, samples), float32
    labels: np.ndarray  # (trials,), int
    fs: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.epochs = np.asarray(self.epochs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.epochs.ndim != 3:
            raise DataError(f"epochs must be (trials, channels, samples), got {self.epochs.shape}")
        if len(self.labels) != len(self.epochs):
            raise DataError(f"{len(self.epochs)} epochs but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "EpochSet":
        return EpochSet(self.epochs[idx], self.labels[idx], self.fs, dict(self.meta))


def _nyquist_check(fs: float, high: float, what: str) -> None:
    if high > EDGE_LIMIT * fs / 2:
        raise ConfigurationError(
            f"{what}: edge {high} Hz exceeds {EDGE_LIMIT} x Nyquist ({EDGE_LIMIT * fs / 2:g} Hz at fs={fs:g})")


def _apply(rec: Recording, fn) -> Recording:
    x = rec.data
    out = np.empty_like(x)
    for ch in range(x.shape[0]):
        out[ch] = fn(x[ch].astype(np.float64))
    return rec.replace(out)


def bandpass_sos(fs: float, low_hz: float, high_hz: float, order: int = 4) -> np.ndarray:
    if not 0 < low_hz < high_hz:
        raise ConfigurationError(f"band-pass needs 0 < low < high, got {low_hz}, {high_hz}")
    _nyquist_check(fs, high_hz, "band-pass")
    return signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")


def bandpass(rec: Recording, low_hz: float = 0.5, high_hz: float = 125.0, order: int = 4) -> Recording:
    """Zero-phase Butterworth band-pass."""
    sos = bandpass_sos(rec.fs, low_hz, high_hz, order)
    return _apply(rec, lambda v: signal.sosfiltfilt(sos, v))


def notch(rec: Recording, freqs_hz: Sequence[float] = (60.0, 120.0), quality: float = 30.0) -> Recording:
    """Zero-phase second-order notch at each frequency."""
    filters = []
    for f0 in freqs_hz:
        if not 0 < f0 < rec.fs / 2:
            raise ConfigurationError(f"notch frequency {f0} Hz must lie in (0, Nyquist={rec.fs / 2:g})")
        b, a = signal.iirnotch(f0, quality, fs=rec.fs)
        filters.append(signal.tf2sos(b, a))
    if not filters:
        return rec
    sos = np.vstack(filters)
    return _apply(rec, lambda v: signal.sosfiltfilt(sos, v))


def _referenced(x: np.ndarray) -> bool:
    """True when every across-channel mean is already at the rounding level of the data."""
    eps = np.finfo(x.dtype).eps if np.issubdtype(x.dtype, np.floating) else 0.0
    m = np.abs(x.mean(axis=0, dtype=np.float64))
    return bool(np.all(m <= x.shape[0] * eps * np.abs(x).max(axis=0)))


def car(rec: Recording, max_passes: int = 8) -> Recording:
    """Subtract the across-channel mean at every sample.

    The subtraction repeats until the remaining mean is at rounding level, and
    input already at that level is returned unchanged, so ``car`` is idempotent.
    """
    y = rec.data.copy()
    for _ in range(max_passes):
        if _referenced(y):
            break
        y = y - y.mean(axis=0, dtype=np.float64).astype(y.dtype)
    return rec.replace(y)


def high_gamma_edges(fs: float) -> tuple[float, float]:
    low, high = HIGH_GAMMA
    if fs / 2 <= low:
        raise ConfigurationError(f"fs={fs:g} Hz too low for the high-gamma band (Nyquist must exceed {low} Hz)")
    limit = EDGE_LIMIT * fs / 2
    if high > limit:
        log.warning("high-gamma upper edge clamped from %g to %g Hz at fs=%g", high, limit, fs)
        high = limit
    if high <= low:
        raise ConfigurationError(f"fs={fs:g} Hz leaves no room above {low} Hz for the high-gamma band")
    return low, high


def high_gamma(rec: Recording) -> Recording:
    low, high = high_gamma_edges(rec.fs)
    return bandpass(rec, low, high)


def epoch_and_baseline(rec: Recording, events: EventList, epoch_s: float = 2.0,
                       baseline_s: float = 0.5) -> EpochSet:
    """Cut [e, e + epoch) windows and subtract each channel's mean over [e - baseline, e)."""
    n_epoch = int(round(epoch_s * rec.fs))
    n_base = int(round(baseline_s * rec.fs))
    total = rec.data.shape[1]
    out = np.empty((len(events), rec.n_channels, n_epoch), dtype=np.float32)
    for i, e in enumerate(events.samples):
        if e - n_base < 0 or e + n_epoch > total:
            raise DataError(
                f"event {i} at sample {e} needs {n_base} samples before and {n_epoch} after "
                f"(recording has {total})")
        seg = rec.data[:, e:e + n_epoch].astype(np.float64)
        base = rec.data[:, e - n_base:e].astype(np.float64)
        # anchor on the first baseline sample so a constant window yields an exact zero
        ref = base[:, :1]
        offset = ref + (base - ref).mean(axis=1, keepdims=True)
        out[i] = seg - offset
    return EpochSet(out, events.labels.copy(), rec.fs)


@dataclass
class PreprocessConfig:
    bandpass_low: float = 0.5
    bandpass_high: float = 125.0
    notch_freqs: tuple[float, ...] = (60.0, 120.0)
    notch_q: float = 30.0
    use_car: bool = True
    use_high_gamma: bool = True
    epoch_s: float = 2.0
    baseline_s: float = 0.5


def preprocess(rec: Recording, events: EventList, cfg: PreprocessConfig | None = None) -> EpochSet:
    """Full chain: bandpass -> notch -> CAR -> high-gamma -> epoch + baseline."""
    cfg = cfg or PreprocessConfig()
    rec = bandpass(rec, cfg.bandpass_low, cfg.bandpass_high)
    rec = notch(rec, cfg.notch_freqs, cfg.notch_q)
    if cfg.use_car:
        rec = car(rec)
    if cfg.use_high_gamma:
        rec = high_gamma(rec)
    return epoch_and_baseline(rec, events, cfg.epoch_s, cfg.baseline_s)
