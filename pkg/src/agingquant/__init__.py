"""Aging-aware input compression and quantization for a MAC-based NPU."""

__version__ = "0.1.0"
