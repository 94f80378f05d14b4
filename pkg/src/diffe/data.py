"""Synthetic imagined-speech EEG corpus, splitting, batching and the band-power oracle.

Each class k < 12 carries a narrowband burst at ``72 + 4k`` Hz projected onto
the scalp through a fixed class-specific spatial pattern, active for the two
seconds after its event. Class 12 (rest) has no burst. The background is
1/f noise plus a common-mode component and 60/120 Hz line interference, so
both the notch and the high-gamma selection carry weight downstream.

``snr_db`` compares the mean burst power on a channel with the background
power on that channel within +-1 Hz of the burst frequency. At 0 dB a
narrowband readout separates the classes well, while broadband statistics of
the raw epochs stay near chance.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import fft as sp_fft
from scipy.signal.windows import tukey

from .errors import ConfigurationError, DataError
from .sigproc import EpochSet, EventList, Recording

N_CLASSES = 13
REST_CLASS = 12

# 10-10 positions in a 64-channel cap (FCz reference and FPz ground excluded)
CHANNEL_NAMES = [
    "Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    "FT9", "FT7", "FC5", "FC3", "FC1", "FC2", "FC4", "FC6", "FT8", "FT10", "T7", "C5", "C3", "C1", "Cz",
    "C2", "C4", "C6", "T8", "TP9", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "TP10",
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO3", "POz", "PO4", "PO8", "O1", "Oz",
    "O2", "Iz",
]


def class_frequency(k: int) -> float:
    return 72.0 + 4.0 * k


@dataclass
class SyntheticConfig:
    subjects: int = 1
    per_class: int = 100
    classes: int = N_CLASSES
    channels: int = 64
    fs: float = 512.0
    snr_db: float = 0.0
    line_noise_amp: float = 2.0
    common_mode_amp: float = 0.5
    spacing_s: float = 3.5
    jitter_s: float = 0.5
    epoch_s: float = 2.0
    seed: int = 42

    def validate(self) -> None:
        if self.per_class < 1:
            raise ConfigurationError("per_class must be >= 1")
        if self.classes != N_CLASSES:
            raise ConfigurationError(f"classes is fixed at {N_CLASSES}")
        if self.channels < 1 or self.subjects < 1:
            raise ConfigurationError("channels and subjects must be >= 1")
        top = class_frequency(self.classes - 2)
        if top > 0.95 * self.fs / 2:
            raise ConfigurationError(f"fs={self.fs:g} Hz cannot carry the {top:g} Hz class signature")
        if self.spacing_s < self.epoch_s + 0.5:
            raise ConfigurationError(
                f"event spacing {self.spacing_s} s leaves no room for a {self.epoch_s} s epoch plus 0.5 s baseline")


def _pink_noise(rng: np.random.Generator, n: int, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit-variance 1/f noise and its one-sided power spectrum (for in-band power)."""
    m = sp_fft.next_fast_len(n, real=True)
    spec = sp_fft.rfft(rng.standard_normal(m))
    f = np.fft.rfftfreq(m, 1.0 / fs)
    spec /= np.sqrt(np.maximum(f, 0.5))
    spec[0] = 0.0
    x = sp_fft.irfft(spec, m)[:n]
    std = x.std()
    return x / std, np.abs(spec / std) ** 2


def _band_fraction(power: np.ndarray, fs: float, lo: float, hi: float) -> float:
    f = np.linspace(0, fs / 2, len(power))
    band = (f >= lo) & (f <= hi)
    return float(power[band].sum() / power[1:].sum())


def generate_subject(cfg: SyntheticConfig, seed) -> tuple[Recording, EventList]:
    rng = np.random.default_rng(seed)
    fs = cfg.fs
    n_events = cfg.classes * cfg.per_class
    n_epoch = int(round(cfg.epoch_s * fs))
    labels = rng.permutation(np.repeat(np.arange(cfg.classes), cfg.per_class))
    gaps = cfg.spacing_s + rng.uniform(0, cfg.jitter_s, n_events)
    lead = 1.0
    onsets_s = lead + np.concatenate(([0.0], np.cumsum(gaps[:-1])))
    events = np.round(onsets_s * fs).astype(np.int64)
    n = int(events[-1] + n_epoch + round(lead * fs))

    # background: per-channel 1/f noise with mild gain spread plus a shared component
    data = np.empty((cfg.channels, n), dtype=np.float32)
    gains = rng.uniform(0.8, 1.25, cfg.channels)
    common, common_power = _pink_noise(rng, n, fs)
    for ch in range(cfg.channels):
        x, _ = _pink_noise(rng, n, fs)
        data[ch] = gains[ch] * x + cfg.common_mode_amp * common
    # expected background power per channel near each class frequency (independent parts add)
    channel_power = float(np.mean(gains ** 2) + cfg.common_mode_amp ** 2)
    slot_power = np.array([_band_fraction(common_power, fs, class_frequency(k) - 1.0, class_frequency(k) + 1.0)
                           for k in range(cfg.classes)]) * channel_power

    t = np.arange(n) / fs
    line_gain = rng.uniform(0.9, 1.1, cfg.channels)[:, None]
    line = np.sin(2 * np.pi * 60.0 * t + rng.uniform(0, 2 * np.pi))
    line += 0.5 * np.sin(2 * np.pi * 120.0 * t + rng.uniform(0, 2 * np.pi))
    for ch in range(cfg.channels):
        data[ch] += (cfg.line_noise_amp * line_gain[ch, 0] * line).astype(np.float32)
    del line

    # class signatures: spatial patterns with unit RMS across channels
    patterns = rng.standard_normal((cfg.classes, cfg.channels))
    patterns /= np.sqrt(np.mean(patterns ** 2, axis=1, keepdims=True))
    envelope = tukey(n_epoch, 0.2)
    amps = np.sqrt(slot_power * 10 ** (cfg.snr_db / 10) / (0.5 * np.mean(envelope ** 2)))
    te = np.arange(n_epoch) / fs
    for e, k in zip(events, labels):
        if k == REST_CLASS:
            continue
        burst = amps[k] * envelope * np.sin(2 * np.pi * class_frequency(k) * te + rng.uniform(0, 2 * np.pi))
        data[:, e:e + n_epoch] += np.outer(patterns[k], burst).astype(np.float32)

    rec = Recording(data, fs, CHANNEL_NAMES[:cfg.channels] if cfg.channels <= len(CHANNEL_NAMES) else None)
    return rec, EventList(events, labels)


def generate_synthetic(cfg: SyntheticConfig | None = None) -> list[tuple[Recording, EventList]]:
    """One continuous recording plus event list per subject, each from a derived seed."""
    cfg = cfg or SyntheticConfig()
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.subjects)
    return [generate_subject(cfg, s) for s in seeds]


def synthetic_config_dict(cfg: SyntheticConfig) -> dict:
    return asdict(cfg)


@dataclass
class DatasetSplit:
    train: np.ndarray
    test: np.ndarray


def _test_quota(counts: np.ndarray, fraction: float) -> np.ndarray:
    """Per-class test counts summing to round(N * fraction), largest remainders first."""
    exact = counts * fraction
    quota = np.floor(exact).astype(int)
    short = int(round(counts.sum() * fraction)) - quota.sum()
    order = np.argsort(-(exact - quota), kind="stable")
    quota[order[:max(short, 0)]] += 1
    return np.minimum(quota, counts - 1)


def split(labels, test_fraction: float = 0.2, seed: int = 42) -> DatasetSplit:
    """Stratified shuffle split; every class keeps at least one training sample."""
    if isinstance(labels, EpochSet):
        labels = labels.labels
    labels = np.asarray(labels)
    if not 0 < test_fraction < 1:
        raise ConfigurationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    classes, counts = np.unique(labels, return_counts=True)
    for k, c in zip(classes, counts):
        if c < 2:
            raise DataError(f"class {k} has {c} sample(s); at least 2 are needed to split")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k, n_test in zip(classes, _test_quota(counts, test_fraction)):
        idx = rng.permutation(np.flatnonzero(labels == k))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return DatasetSplit(np.sort(np.concatenate(train)), np.sort(np.concatenate(test)))


def batches(indices, batch_size: int, seed: int, epoch_index: int) -> list[np.ndarray]:
    """Per-epoch shuffle keyed on (seed, epoch_index); the last batch may be short."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, epoch_index])
    order = rng.permutation(np.asarray(indices))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def band_power_features(epochs: np.ndarray, fs: float, freqs=None) -> np.ndarray:
    """Log power at each class frequency, averaged over channels: (trials, n_freqs)."""
    if freqs is None:
        freqs = [class_frequency(k) for k in range(N_CLASSES - 1)]
    n = epochs.shape[-1]
    spec = np.abs(np.fft.rfft(epochs.astype(np.float64) * np.hanning(n), axis=-1)) ** 2
    f = np.fft.rfftfreq(n, 1.0 / fs)
    cols = []
    for f0 in freqs:
        band = np.abs(f - f0) <= 1.0
        cols.append(np.log(spec[..., band].sum(axis=-1).mean(axis=-1) + 1e-12))
    return np.stack(cols, axis=1)


def least_squares_fit(features: np.ndarray, labels: np.ndarray, n_classes: int = N_CLASSES):
    mu, sd = features.mean(0), features.std(0) + 1e-12
    a = np.hstack([(features - mu) / sd, np.ones((len(features), 1))])
    w, *_ = np.linalg.lstsq(a, np.eye(n_classes)[labels], rcond=None)

    def predict(f):
        return (np.hstack([(f - mu) / sd, np.ones((len(f), 1))]) @ w).argmax(axis=1)

    return predict


def band_power_oracle(data: EpochSet, split_: DatasetSplit) -> float:
    """Test accuracy of least squares on one-hot targets over band-power features."""
    feats = band_power_features(data.epochs, data.fs)
    predict = least_squares_fit(feats[split_.train], data.labels[split_.train])
    return float(np.mean(predict(feats[split_.test]) == data.labels[split_.test]))
