"""Synthetic generation, fidelity scoring and dispatch replay for
emergency-intervention tabular data."""

__version__ = "0.1.0"
