"""Weighted sum-rate beamforming for multicell OFDM by sequential convex approximation."""

__version__ = "0.1.0"
