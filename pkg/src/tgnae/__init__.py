"""Transformer Grammar attention entropy as a reading-time predictor."""

__version__ = "0.1.0"
