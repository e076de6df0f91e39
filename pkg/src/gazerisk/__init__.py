"""Gaze-informed intention and trajectory prediction with particle-based collision risk."""

__version__ = "0.1.0"
