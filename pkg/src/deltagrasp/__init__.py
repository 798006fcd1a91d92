"""Aerial delta-arm grasp planning."""

__version__ = "0.1.0"
