"""Tracking-free relightable volumetric avatars: training, rendering, serving."""

__version__ = "0.1.0"
