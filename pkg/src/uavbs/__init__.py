"""Predictive repositioning of UAV base stations."""

__version__ = "0.1.0"
