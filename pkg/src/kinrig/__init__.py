"""Rigged articulated models from a template mesh and a single-view depth sequence."""
__version__ = "0.1.0"
