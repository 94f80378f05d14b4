"""Diffusion-conditioned autoencoder classification of multichannel EEG epochs."""
__version__ = "0.1.0"

from .estimator import DiffEClassifier  # noqa: E402

__all__ = ["DiffEClassifier", "__version__"]
