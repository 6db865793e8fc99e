"""Spectral flow of finite semifinite spectral triples by several independent engines."""

__version__ = "0.3.0"
