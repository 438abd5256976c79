"""Geometry of embedded hypersurfaces."""

__version__ = "0.1.0"
