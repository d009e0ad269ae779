"""Transformer-based fault diagnosis for rotating machinery vibration data."""

__version__ = "0.1.0"
