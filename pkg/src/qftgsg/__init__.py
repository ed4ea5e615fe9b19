"""Gaussian ground states of free lattice scalar fields: wavelet ICMs, UDU factors and
simulated quantum state preparation."""

__version__ = "0.1.0"
