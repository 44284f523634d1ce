"""Numerical laboratory for positive closed currents of Hénon-like maps on a bidisk."""

__version__ = "0.1.0"
