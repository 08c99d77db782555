"""Masked-visit transformer for reconstructing sparse daily mobility trajectories."""

__version__ = "0.1.0"
