"""Asymmetric feature maps for translation-invariant sketch retrieval."""

__version__ = "0.1.0"
