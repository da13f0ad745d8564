"""DAS, coherence factor, minimum-variance and high-resolution CF beamforming.

A pixel's snapshot is the vector of channel samples taken at that pixel's
one-way delays; the temporal window for covariance averaging shifts every
channel by the same whole number of samples around those delays.

The per-pixel functions work on whatever the frame holds (real RF or complex
analytic samples). Image formation runs on the analytic signal of each
channel by default and returns the real part of the beamformed output as the
RF image, with CF/HRCF as real weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .geometry import DelayTable, ImagingGrid
from .phantom import ChannelFrame

METHODS = ("DAS", "DAS+CF", "MV", "MV+CF", "DAS+HRCF")
STAGES = ("rf", "envelope", "db")
# covariance traces below this are treated as all-zero data
DEGENERATE_TRACE = 1e-300


@dataclass(frozen=True)
class MVParams:
    subarray_length: int
    temporal_half_window: int = 5
    loading_constant: float | None = None

    def __post_init__(self):
        if int(self.subarray_length) != self.subarray_length or self.subarray_length < 1:
            raise ValueError("subarray_length must be a positive integer")
        if int(self.temporal_half_window) != self.temporal_half_window or self.temporal_half_window < 0:
            raise ValueError("temporal_half_window must be a non-negative integer")
        if self.loading_constant is None:
            object.__setattr__(self, "loading_constant", 1.0 / (100 * self.subarray_length))
        if not self.loading_constant > 0:
            raise ValueError("loading_constant must be positive")

    @classmethod
    def default(cls, num_elements: int) -> "MVParams":
        """L = M/2, K = 5, loading constant 1/(100 L)."""
        return cls(subarray_length=max(1, num_elements // 2))

    def check(self, num_elements: int) -> None:
        if self.subarray_length > num_elements:
            raise ValueError(
                f"subarray_length {self.subarray_length} exceeds number of elements {num_elements}"
            )


@dataclass(frozen=True)
class DelayedSnapshot:
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("snapshot values must be finite")

    @property
    def num_elements(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    loaded: np.ndarray
    gamma: float

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @property
    def degenerate(self) -> bool:
        return self.trace < DEGENERATE_TRACE


@dataclass
class BeamformedImage:
    grid: ImagingGrid
    values: np.ndarray = field(repr=False)
    stage: str = "rf"
    method: str = "DAS"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.method} image has non-finite values")


def _window_bounds(delays: DelayTable, iz: int, nsamp: int, k: int | None, half_window: int):
    k_pix = int(delays.pixel_samples[iz])
    k = k_pix if k is None else int(k)
    lo = max(-half_window, -k)
    hi = min(half_window, nsamp - 1 - k)
    if hi < 0 or lo > 0:
        lo = hi = 0
    shift = k - k_pix
    return lo + shift, hi + shift, shift


def delayed_block(frame: ChannelFrame, delays: DelayTable, pixel, shift_lo: int, shift_hi: int) -> np.ndarray:
    """(shift_hi - shift_lo + 1, M) block of delay-aligned samples around ``pixel``."""
    iz, ix = pixel
    out = np.empty((shift_hi - shift_lo + 1, frame.num_elements), dtype=frame.samples.dtype)
    _kernels.delayed_window(
        frame.samples, delays.delays[iz, ix], delays.valid_mask[iz, ix], shift_lo, shift_hi, out
    )
    return out


def delay_and_align(frame: ChannelFrame, delays: DelayTable, pixel, k: int | None = None) -> DelayedSnapshot:
    """Channel samples interpolated at the pixel's delays (zero where out of record)."""
    iz = pixel[0]
    shift = 0 if k is None else int(k) - int(delays.pixel_samples[iz])
    return DelayedSnapshot(delayed_block(frame, delays, pixel, shift, shift)[0])


def _vec(snapshot) -> np.ndarray:
    x = np.asarray(snapshot.values if isinstance(snapshot, DelayedSnapshot) else snapshot)
    return x if np.iscomplexobj(x) else x.astype(float, copy=False)


def _scalar(v):
    return complex(v) if np.iscomplexobj(v) else float(v)


def das(snapshot):
    return _scalar(np.sum(_vec(snapshot)))


def _energy(x: np.ndarray) -> float:
    return float(np.sum(np.abs(x) ** 2)) if np.iscomplexobj(x) else float(np.sum(x * x))


def coherence_factor(snapshot) -> float:
    """Coherent over M times incoherent power; 0 for an all-zero snapshot."""
    x = _vec(snapshot)
    energy = _energy(x)
    if energy == 0.0:
        return 0.0
    # bounded by 1 (Cauchy-Schwarz); clamp the last-ulp rounding excess
    return min(1.0, abs(np.sum(x)) ** 2 / (x.shape[0] * energy))


def smoothed_covariance(block: np.ndarray, subarray_length: int) -> np.ndarray:
    """Subarray-averaged, time-averaged sample covariance of a (T, M) block."""
    block = np.ascontiguousarray(block)
    if not np.iscomplexobj(block):
        block = block.astype(float, copy=False)
    if not 1 <= subarray_length <= block.shape[1]:
        raise ValueError("subarray_length must lie in [1, M]")
    out = np.empty((subarray_length, subarray_length), dtype=block.dtype)
    _kernels.smoothed_covariance(block, int(subarray_length), out)
    return out


def loaded_covariance(matrix: np.ndarray, params: MVParams) -> CovarianceEstimate:
    gamma = params.loading_constant * float(np.trace(matrix).real)
    loaded = matrix + gamma * np.eye(matrix.shape[0])
    return CovarianceEstimate(matrix=matrix, loaded=loaded, gamma=gamma)


def estimate_covariance(
    frame: ChannelFrame, delays: DelayTable, pixel, params: MVParams, k: int | None = None
) -> CovarianceEstimate:
    """Covariance for ``pixel`` at time index ``k`` (default: the pixel's own sample).

    The (2K+1)-sample window is shrunk at the record edges and normalised by
    the number of samples actually used.
    """
    params.check(frame.num_elements)
    lo, hi, _ = _window_bounds(delays, pixel[0], frame.acq.num_samples, k, params.temporal_half_window)
    block = delayed_block(frame, delays, pixel, lo, hi)
    return loaded_covariance(smoothed_covariance(block, params.subarray_length), params)


def mv_weights(cov: CovarianceEstimate, params: MVParams | None = None) -> np.ndarray | None:
    """Distortionless minimum-variance weights for an all-ones steering vector.

    Returns None when the covariance is degenerate (all-zero data).
    """
    if cov.degenerate:
        return None
    ones = np.ones(cov.loaded.shape[0])
    w = cho_solve(cho_factor(cov.loaded, lower=True), ones)
    return w / w.sum()


def subarray_mean(snapshot, subarray_length: int) -> np.ndarray:
    """Average of the M - L + 1 overlapping length-L subarray vectors."""
    x = _vec(snapshot)
    nsub = x.shape[0] - subarray_length + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, subarray_length)
    return windows.sum(axis=0) / nsub


def mv_output(
    frame: ChannelFrame,
    delays: DelayTable,
    pixel,
    params: MVParams,
    k: int | None = None,
    weights: np.ndarray | None = None,
) -> float:
    """MV beamformer output; ``weights`` overrides the adaptive weights if given."""
    if weights is None:
        weights = mv_weights(estimate_covariance(frame, delays, pixel, params, k), params)
        if weights is None:
            return 0.0
    snap = delay_and_align(frame, delays, pixel, k)
    return _scalar(np.vdot(weights, subarray_mean(snap, params.subarray_length)))


def hrcf(
    frame: ChannelFrame,
    delays: DelayTable,
    pixel,
    params: MVParams,
    k: int | None = None,
    weights: np.ndarray | None = None,
) -> float:
    """M |y_MV|^2 over the incoherent energy of the delayed channels (0 if that is 0)."""
    x = delay_and_align(frame, delays, pixel, k).values
    energy = _energy(x)
    if energy == 0.0:
        return 0.0
    y = mv_output(frame, delays, pixel, params, k, weights)
    return x.shape[0] * abs(y) ** 2 / energy


def beamform_components(
    frame: ChannelFrame, delays: DelayTable, params: MVParams, analytic: bool = True
) -> dict[str, np.ndarray]:
    """Per-pixel DAS sum, CF, MV output and HRCF over the whole grid.

    DAS and MV come back complex when ``analytic`` is set.
    """
    params.check(frame.num_elements)
    if delays.delays.shape[2] != frame.num_elements:
        raise ValueError("delay table and frame disagree on the number of elements")
    if analytic:
        frame = frame.analytic()
    nz, nx = delays.shape
    out = np.empty((nz, nx, 4), dtype=frame.samples.dtype)
    _kernels.beamform_grid(
        np.ascontiguousarray(frame.samples),
        np.ascontiguousarray(delays.delays),
        np.ascontiguousarray(delays.valid_mask),
        np.ascontiguousarray(delays.pixel_samples, dtype=np.int64),
        int(params.subarray_length),
        int(params.temporal_half_window),
        float(params.loading_constant),
        out,
    )
    return {"das": out[..., 0], "cf": out[..., 1].real, "mv": out[..., 2], "hrcf": out[..., 3].real}


def combine(components: dict[str, np.ndarray], method: str) -> np.ndarray:
    """Real RF image for ``method`` from the per-pixel components."""
    y_das = np.real(components["das"])
    y_mv = np.real(components["mv"])
    if method == "DAS":
        return y_das.copy()
    if method == "DAS+CF":
        return components["cf"] * y_das
    if method == "MV":
        return y_mv.copy()
    if method == "MV+CF":
        return components["cf"] * y_mv
    if method == "DAS+HRCF":
        return components["hrcf"] * y_das
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def beamform_images(
    frame: ChannelFrame, delays: DelayTable, methods, params: MVParams, analytic: bool = True
) -> dict[str, BeamformedImage]:
    """RF images for several methods from a single pass over the grid."""
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    comps = beamform_components(frame, delays, params, analytic)
    return {m: BeamformedImage(delays.grid, combine(comps, m), "rf", m) for m in methods}


def beamform_image(
    frame: ChannelFrame, delays: DelayTable, method: str, params: MVParams, analytic: bool = True
) -> BeamformedImage:
    return beamform_images(frame, delays, [method], params, analytic)[method]
