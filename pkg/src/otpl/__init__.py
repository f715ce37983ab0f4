"""Offline learning of polynomial trajectory parameters for highway driving."""

__version__ = "0.1.0"
