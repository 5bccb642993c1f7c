"""Affect-driven Go-Explore search on a deterministic racing toy."""

__version__ = "0.1.0"
