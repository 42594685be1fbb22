"""Canonical correlation analysis by shift-and-invert preconditioning."""

__version__ = "0.1.0"
