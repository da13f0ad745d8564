"""Display chain: axial envelope detection and log compression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import hilbert

from .beamform import BeamformedImage

# samples at each axial edge affected by the FFT-based analytic signal
EDGE_MARGIN = 10


@dataclass(frozen=True)
class DisplayParams:
    dynamic_range_db: float = 60.0

    def __post_init__(self):
        if not self.dynamic_range_db > 0:
            raise ValueError("dynamic_range_db must be positive")


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def envelope(image: BeamformedImage) -> BeamformedImage:
    """Magnitude of the analytic signal along the axial axis of each column."""
    if image.stage != "rf":
        raise ValueError(f"envelope expects an rf image, got stage {image.stage!r}")
    nz = image.values.shape[0]
    analytic = hilbert(image.values, N=_next_pow2(nz), axis=0)[:nz]
    return BeamformedImage(image.grid, np.abs(analytic), "envelope", image.method)


def log_compress(image: BeamformedImage, params: DisplayParams = DisplayParams()) -> BeamformedImage:
    """20 log10 of the peak-normalised envelope, clipped to the dynamic range."""
    if image.stage != "envelope":
        raise ValueError(f"log_compress expects an envelope image, got stage {image.stage!r}")
    peak = float(np.max(image.values))
    if not peak > 0:
        raise ValueError(f"{image.method} envelope is all zero; nothing to normalise against")
    floor = -params.dynamic_range_db
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(image.values / peak)
    db = np.clip(db, floor, 0.0)
    return BeamformedImage(image.grid, db, "db", image.method)
