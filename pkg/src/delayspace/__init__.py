"""Delay-space decomposition and path-inflation detection."""
__version__ = "0.1.0"
