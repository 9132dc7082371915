"""Hybrid gray-box modelling of a pneumatic conveying drying line."""

__version__ = "0.1.0"
