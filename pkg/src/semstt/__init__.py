"""Semantic speech-to-text transmission over simulated noisy channels."""

__version__ = "0.1.0"
