"""Photoacoustic linear-array beamforming with high-resolution coherence factor weighting."""

__version__ = "0.1.0"
