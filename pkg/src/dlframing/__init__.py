"""Finite-blocklength framing of downlink control information."""

__version__ = "0.1.0"
