"""Compositional 3D tooth generation."""

__version__ = "0.1.0"
