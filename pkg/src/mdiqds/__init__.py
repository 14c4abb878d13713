"""Measurement-device-independent quantum digital signatures, simulated end to end."""

__version__ = "0.1.0"
