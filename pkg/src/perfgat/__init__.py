"""Spatiotemporal graph attention pipeline for perfusion time-series."""

__version__ = "0.1.0"
