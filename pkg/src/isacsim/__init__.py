"""Monostatic Wi-Fi sensing simulator and DSP library."""

__version__ = "0.1.0"
