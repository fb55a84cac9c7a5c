"""Resampling augmentation and contrastive pretraining for time series."""

__version__ = "0.1.0"
