"""Input checks shared by the estimator, the CLI and the training entry points."""
from __future__ import annotations

import numpy as np
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array

from .errors import ConfigurationError, DataError
from .networks import DOWNSAMPLE


def check_epochs(X, n_channels: int | None = None) -> np.ndarray:
    """Return ``X`` as a finite float32 (trials, channels, samples) array."""
    X = check_array(X, allow_nd=True, dtype=[np.float32, np.float64], ensure_2d=False)
    if X.ndim != 3:
        raise DataError(f"expected epochs shaped (trials, channels, samples), got {X.shape}")
    if n_channels is not None and X.shape[1] != n_channels:
        raise DataError(f"expected {n_channels} channels, got {X.shape[1]}")
    if X.shape[2] % DOWNSAMPLE:
        raise ConfigurationError(
            f"epoch length {X.shape[2]} must be divisible by {DOWNSAMPLE} (three stride-2 stages)")
    return X.astype(np.float32, copy=False)


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    check_classification_targets(y)
    if y.ndim != 1 or len(y) != n_samples:
        raise DataError(f"expected {n_samples} labels, got shape {y.shape}")
    return y
