"""Lyapunov-exponent signatures of block-cipher modes of operation."""

__version__ = "0.1.0"
