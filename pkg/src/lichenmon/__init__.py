"""Lichen time-lapse monitoring toolkit."""
__version__ = "0.1.0"
