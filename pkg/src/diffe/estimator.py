"""scikit-learn compatible wrapper around the Diff-E training loop."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DataError
from .training import MODES, ModelConfig, TrainConfig, fit_models, infer, input_scale
from .networks import build_bundle
from .validation import check_epochs, check_labels


class DiffEClassifier(ClassifierMixin, BaseEstimator):
    """Diffusion-conditioned autoencoder classifier for multichannel epochs.

    ``fit`` trains the denoiser, conditional autoencoder and linear classifier
    jointly; ``predict`` and ``decision_function`` use only the encoder and
    classifier. Inputs are (trials, channels, samples) arrays whose sample
    count is divisible by 8. Inputs are divided by the training-set standard
    deviation (``scale_``) before reaching the networks.

    Parameters mirror :class:`diffe.training.TrainConfig`; ``mode`` selects
    the full model or one of the two ablations.
    """

    def __init__(self, alpha=0.1, epochs=500, batch_size=32, base_lr=9e-5, max_lr=1.5e-3,
                 cycle_epochs=4, T=1000, beta_start=1e-4, beta_end=0.02, mode="full",
                 ddpm_widths=(32, 64, 128), encoder_widths=(64, 128, 256), decoder_widths=(32, 32, 32),
                 time_dim=64, groups=8, classifier_hidden=0, random_state=42):
        self.alpha = alpha
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.max_lr = max_lr
        self.cycle_epochs = cycle_epochs
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.mode = mode
        self.ddpm_widths = ddpm_widths
        self.encoder_widths = encoder_widths
        self.decoder_widths = decoder_widths
        self.time_dim = time_dim
        self.groups = groups
        self.classifier_hidden = classifier_hidden
        self.random_state = random_state

    def to_config(self) -> TrainConfig:
        return TrainConfig(
            alpha=self.alpha, epochs=self.epochs, batch_size=self.batch_size, base_lr=self.base_lr,
            max_lr=self.max_lr, cycle_epochs=self.cycle_epochs, T=self.T, beta_start=self.beta_start,
            beta_end=self.beta_end, seed=self.random_state, ablation_mode=self.mode,
            model=ModelConfig(tuple(self.ddpm_widths), tuple(self.encoder_widths), tuple(self.decoder_widths),
                              self.time_dim, self.groups, self.classifier_hidden),
        )

    def fit(self, X, y, eval_set=None):
        """Train from scratch.

        ``eval_set=(X_val, y_val)`` is scored after every epoch and recorded in
        ``history_``; it never influences the parameters.
        """
        X = check_epochs(X)
        y = check_labels(y, len(X))
        config = self.to_config()
        config.validate()
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_channels_, self.n_times_ = X.shape[1], X.shape[2]
        self.scale_ = input_scale(X)
        m = config.model
        models = build_bundle(config.ablation_mode, self.n_channels_, config.seed, m.ddpm_widths,
                              m.encoder_widths, m.decoder_widths, m.time_dim, m.groups,
                              m.classifier_hidden, n_classes=len(self.classes_))
        x_val = y_val = None
        if eval_set is not None:
            x_val = check_epochs(eval_set[0], self.n_channels_) / self.scale_
            raw = check_labels(eval_set[1], len(x_val))
            unseen = np.setdiff1d(raw, self.classes_)
            if unseen.size:
                raise DataError(f"eval_set holds labels absent from training: {unseen.tolist()}")
            y_val = np.searchsorted(self.classes_, raw)
        result = fit_models((X / self.scale_).astype(np.float32), y_enc, config,
                            x_val, y_val, models=models)
        self.models_ = result.models
        self.history_ = result.history
        self.boundary_violations_ = result.boundary_violations
        return self

    def decision_function(self, X) -> np.ndarray:
        """Raw (unnormalized) class scores from the encoder and linear classifier."""
        check_is_fitted(self, "models_")
        X = check_epochs(X, self.n_channels_)
        _, scores = infer((X / self.scale_).astype(np.float32), self.models_.phi, self.models_.rho)
        return scores

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def param_counts(self) -> dict[str, int]:
        check_is_fitted(self, "models_")
        return self.models_.param_counts()


__all__ = ["DiffEClassifier", "MODES"]
