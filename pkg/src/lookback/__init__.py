"""Attention lookback-ratio hallucination detection and guided decoding."""

__version__ = "0.1.0"
