"""Linear-array geometry, acquisition parameters, imaging grid and PA delay tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

DEFAULT_NUM_ELEMENTS = 128
DEFAULT_PITCH = 0.1e-3
DEFAULT_FS = 50e6
DEFAULT_SOUND_SPEED = 1540.0
DEFAULT_CENTER_FREQUENCY = 7e6
DEFAULT_BANDWIDTH = 0.77
DEFAULT_GRID_STEP = 0.05e-3
# extra samples recorded past the farthest pixel so late pulse tails are kept
RECORD_MARGIN = 64


def _axis_count(lo: float, hi: float, step: float) -> int:
    # tolerate float round-off such as 20e-3 / 0.05e-3 = 399.9999...
    return int(math.floor((hi - lo) / step + 1e-9)) + 1


@dataclass(frozen=True)
class ArrayGeometry:
    num_elements: int = DEFAULT_NUM_ELEMENTS
    pitch: float = DEFAULT_PITCH

    def __post_init__(self):
        if int(self.num_elements) != self.num_elements or self.num_elements < 2:
            raise ValueError(f"num_elements must be an integer >= 2, got {self.num_elements}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")

    @property
    def element_positions(self) -> np.ndarray:
        """Lateral element centres in metres, symmetric about 0."""
        idx = np.arange(self.num_elements, dtype=float)
        return (idx - (self.num_elements - 1) / 2.0) * self.pitch

    @property
    def aperture(self) -> float:
        return (self.num_elements - 1) * self.pitch


@dataclass(frozen=True)
class AcquisitionParams:
    sampling_frequency: float = DEFAULT_FS
    sound_speed: float = DEFAULT_SOUND_SPEED
    num_samples: int = 4096
    center_frequency: float = DEFAULT_CENTER_FREQUENCY
    fractional_bandwidth: float = DEFAULT_BANDWIDTH

    def __post_init__(self):
        if not self.sampling_frequency > 2 * self.center_frequency:
            raise ValueError(
                "sampling_frequency must exceed twice the center frequency "
                f"({self.sampling_frequency} <= 2 * {self.center_frequency})"
            )
        if not self.center_frequency > 0:
            raise ValueError("center_frequency must be positive")
        if not self.sound_speed > 0:
            raise ValueError("sound_speed must be positive")
        if int(self.num_samples) != self.num_samples or self.num_samples <= 0:
            raise ValueError("num_samples must be a positive integer")
        if not 0 < self.fractional_bandwidth < 2:
            raise ValueError("fractional_bandwidth must lie in (0, 2)")


@dataclass(frozen=True)
class ImagingGrid:
    lateral_min: float = -10e-3
    lateral_max: float = 10e-3
    axial_min: float = 20e-3
    axial_max: float = 80e-3
    lateral_step: float = DEFAULT_GRID_STEP
    axial_step: float = DEFAULT_GRID_STEP

    def __post_init__(self):
        if not (self.lateral_step > 0 and self.axial_step > 0):
            raise ValueError("grid steps must be positive")
        if not (self.lateral_max > self.lateral_min and self.axial_max > self.axial_min):
            raise ValueError("grid max must exceed min on both axes")

    @property
    def nx(self) -> int:
        return _axis_count(self.lateral_min, self.lateral_max, self.lateral_step)

    @property
    def nz(self) -> int:
        return _axis_count(self.axial_min, self.axial_max, self.axial_step)

    @property
    def shape(self) -> tuple[int, int]:
        """(axial, lateral) image shape."""
        return self.nz, self.nx

    @property
    def x(self) -> np.ndarray:
        return self.lateral_min + np.arange(self.nx) * self.lateral_step

    @property
    def z(self) -> np.ndarray:
        return self.axial_min + np.arange(self.nz) * self.axial_step

    def row_index(self, depth: float) -> int:
        """Nearest grid row to ``depth``; raises if outside the grid."""
        half = 0.5 * self.axial_step
        if depth < self.axial_min - half or depth > self.z[-1] + half:
            raise ValueError(f"depth {depth} m outside grid [{self.axial_min}, {self.z[-1]}]")
        return int(np.clip(np.rint((depth - self.axial_min) / self.axial_step), 0, self.nz - 1))

    def col_index(self, lateral: float) -> int:
        half = 0.5 * self.lateral_step
        if lateral < self.lateral_min - half or lateral > self.x[-1] + half:
            raise ValueError(f"lateral {lateral} m outside grid")
        return int(np.clip(np.rint((lateral - self.lateral_min) / self.lateral_step), 0, self.nx - 1))


@dataclass(frozen=True)
class DelayTable:
    """One-way delays in samples, shape ``(nz, nx, M)``, with an in-record mask."""

    delays: np.ndarray = field(repr=False)
    valid_mask: np.ndarray = field(repr=False)
    grid: ImagingGrid | None = None
    sound_speed: float = DEFAULT_SOUND_SPEED
    # per-row nominal sample index of each pixel (on-axis delay), used to
    # clip temporal windows at the record edges
    pixel_samples: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.delays.shape[:2]


def required_samples(geom: ArrayGeometry, acq_fs: float, sound_speed: float, grid: ImagingGrid) -> int:
    """Record length covering the farthest pixel/element pair plus a margin."""
    xe = geom.element_positions
    dx = max(abs(grid.lateral_min - xe[-1]), abs(grid.x[-1] - xe[0]))
    far = math.hypot(dx, grid.z[-1])
    return int(math.ceil(far / sound_speed * acq_fs)) + RECORD_MARGIN


def build_geometry(config: Mapping[str, Any] | None = None):
    """Build validated (ArrayGeometry, AcquisitionParams, ImagingGrid) from a flat config.

    Unspecified values take the defaults (M=128, fs=50 MHz, c=1540 m/s,
    f0=7 MHz, 77 % bandwidth, 0.1 mm pitch). ``num_samples`` defaults to a
    record long enough for the farthest pixel.
    """
    cfg = dict(config or {})
    geom = ArrayGeometry(
        num_elements=int(cfg.get("num_elements", DEFAULT_NUM_ELEMENTS)),
        pitch=float(cfg.get("pitch", DEFAULT_PITCH)),
    )
    grid = ImagingGrid(
        lateral_min=float(cfg.get("lateral_min", -10e-3)),
        lateral_max=float(cfg.get("lateral_max", 10e-3)),
        axial_min=float(cfg.get("axial_min", 20e-3)),
        axial_max=float(cfg.get("axial_max", 80e-3)),
        lateral_step=float(cfg.get("lateral_step", DEFAULT_GRID_STEP)),
        axial_step=float(cfg.get("axial_step", DEFAULT_GRID_STEP)),
    )
    fs = float(cfg.get("sampling_frequency", DEFAULT_FS))
    c = float(cfg.get("sound_speed", DEFAULT_SOUND_SPEED))
    if not c > 0:
        raise ValueError("sound_speed must be positive")
    num_samples = cfg.get("num_samples")
    if num_samples is None:
        num_samples = required_samples(geom, fs, c, grid)
    acq = AcquisitionParams(
        sampling_frequency=fs,
        sound_speed=c,
        num_samples=int(num_samples),
        center_frequency=float(cfg.get("center_frequency", DEFAULT_CENTER_FREQUENCY)),
        fractional_bandwidth=float(cfg.get("fractional_bandwidth", DEFAULT_BANDWIDTH)),
    )
    return geom, acq, grid


def compute_delay_table(
    geom: ArrayGeometry,
    acq: AcquisitionParams,
    grid: ImagingGrid,
    sound_speed_override: float | None = None,
) -> DelayTable:
    """One-way (source to element) delays for every pixel and element.

    ``sound_speed_override`` replaces the acquisition sound speed for
    reconstruction only.
    """
    c = acq.sound_speed
    if sound_speed_override is not None:
        if not sound_speed_override > 0:
            raise ValueError("sound_speed_override must be positive")
        c = float(sound_speed_override)
    fs = acq.sampling_frequency
    xe = geom.element_positions
    x = grid.x
    z = grid.z
    dx = x[:, None] - xe[None, :]  # (nx, M)
    dist = np.sqrt(z[:, None, None] ** 2 + dx[None, :, :] ** 2)
    delays = dist * (fs / c)
    valid = delays <= acq.num_samples - 1
    pixel_samples = np.rint(z * (fs / c)).astype(np.int64)
    return DelayTable(
        delays=delays, valid_mask=valid, grid=grid, sound_speed=c, pixel_samples=pixel_samples
    )
