"""Partial functional maps on triangle meshes."""

__version__ = "0.1.0"
