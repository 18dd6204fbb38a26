"""Tiled single-image super-resolution in numpy."""

__version__ = "0.1.0"
