"""Unsupervised sleep/wake segmentation of multichannel wearable streams."""

__version__ = "0.1.0"
