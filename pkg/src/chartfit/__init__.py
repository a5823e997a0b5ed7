"""Predict Billboard Hot 100 inclusion from streaming-catalog descriptors."""

__version__ = "0.1.0"
