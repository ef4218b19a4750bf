"""Pose and shape alignment of CAD models to single-image observations."""

__version__ = "0.1.0"
