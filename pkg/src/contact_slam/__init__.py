"""Planar contact SLAM for blind manipulation with two tactile pads."""

__version__ = "0.1.0"
