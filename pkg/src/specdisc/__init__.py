"""Numerical toolkit for semiclassical discrete Schrödinger operators."""

__version__ = "0.1.0"
