"""Trion dynamics: RWA blocks, open-system evolution, spectra and drive control."""

__version__ = "0.1.0"
