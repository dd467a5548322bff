"""Semantic label-map to image synthesis with instance-level style control."""

__version__ = "0.1.0"
