"""Sparse dictionary-model VAE for speech power spectrograms, on a small numpy autodiff."""

__version__ = "0.1.0"
