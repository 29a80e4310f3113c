"""Spectra, sweeps and semiclassics of the swept-tilt two-mode Bose-Hubbard model."""

__version__ = "0.1.0"
