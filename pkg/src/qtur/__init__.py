"""Slow-driving thermodynamics of weakly coupled quantum heat engines."""

__version__ = "0.1.0"
