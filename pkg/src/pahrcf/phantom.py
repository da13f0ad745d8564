"""Analytic photoacoustic forward model.

Point absorbers radiate a band-limited bipolar pulse (derivative of a
Gaussian) that reaches each element after a one-way flight time and decays
with spherical spreading. Disk targets ("cysts") are realised as dense random
clouds of such point sources.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.signal import hilbert

from .geometry import AcquisitionParams, ArrayGeometry

SCENARIOS = ("points-40db", "points-0db", "points-sos-error", "cysts-40db", "cysts-0db")

# pulse samples further than this many tau from the arrival are dropped (< 1e-13 of peak)
PULSE_SUPPORT_TAUS = 8.0
CYST_DENSITY_PER_MM2 = 50.0

_FRAME_HEADER = struct.Struct("<qqdd")


@dataclass(frozen=True)
class PointSource:
    lateral: float
    axial: float
    radius: float = 0.1e-3
    amplitude: float = 1.0


@dataclass(frozen=True)
class Cyst:
    lateral: float
    axial: float
    radius: float
    density_per_mm2: float = CYST_DENSITY_PER_MM2
    amplitude: float = 1.0

    @property
    def num_sources(self) -> int:
        area_mm2 = math.pi * (self.radius * 1e3) ** 2
        return int(math.ceil(self.density_per_mm2 * area_mm2))


@dataclass(frozen=True)
class Phantom:
    point_sources: tuple[PointSource, ...] = ()
    cysts: tuple[Cyst, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "point_sources", tuple(self.point_sources))
        object.__setattr__(self, "cysts", tuple(self.cysts))
        for s in (*self.point_sources, *self.cysts):
            if not (s.radius > 0 and s.amplitude > 0):
                raise ValueError(f"radius and amplitude must be positive: {s}")
            if not s.axial > 0:
                raise ValueError(f"source lies behind the array (axial <= 0): {s}")
        for c in self.cysts:
            if not c.density_per_mm2 > 0:
                raise ValueError(f"cyst source density must be positive: {c}")

    @property
    def is_empty(self) -> bool:
        return not self.point_sources and not self.cysts

    def realize(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flatten to point emitters: (lateral, axial, amplitude) arrays.

        Point sources come first in declaration order, then each cyst's
        uniformly drawn interior sources.
        """
        xs = [s.lateral for s in self.point_sources]
        zs = [s.axial for s in self.point_sources]
        amps = [s.amplitude for s in self.point_sources]
        xs, zs, amps = [np.asarray(v, dtype=float) for v in (xs, zs, amps)]
        parts_x, parts_z, parts_a = [xs], [zs], [amps]
        for c in self.cysts:
            n = c.num_sources
            # uniform in the disk: sqrt of a uniform radius fraction
            rad = c.radius * np.sqrt(rng.random(n))
            ang = 2 * np.pi * rng.random(n)
            parts_x.append(c.lateral + rad * np.cos(ang))
            parts_z.append(c.axial + rad * np.sin(ang))
            parts_a.append(np.full(n, c.amplitude))
        return np.concatenate(parts_x), np.concatenate(parts_z), np.concatenate(parts_a)


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError(f"snr_db must be finite or +inf (noiseless), got {self.snr_db}")


@dataclass(frozen=True)
class ChannelFrame:
    samples: np.ndarray = field(repr=False)  # (M, N)
    acq: AcquisitionParams
    rng_seed: int = 0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[1] != self.acq.num_samples:
            raise ValueError(
                f"samples shape {self.samples.shape} does not match num_samples={self.acq.num_samples}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("channel samples must be finite")

    @property
    def num_elements(self) -> int:
        return self.samples.shape[0]

    @property
    def is_analytic(self) -> bool:
        return np.iscomplexobj(self.samples)

    def analytic(self) -> "ChannelFrame":
        """Frame holding each channel's analytic signal (FFT Hilbert transform along time)."""
        if self.is_analytic:
            return self
        n = self.samples.shape[1]
        nfft = 1 << max(0, (n - 1).bit_length())
        z = hilbert(self.samples, N=nfft, axis=1)[:, :n]
        return replace(self, samples=np.ascontiguousarray(z))


@lru_cache(maxsize=None)
def _dog_width_in_peak_units() -> float:
    # |P(f)| of a derivative of Gaussian, normalised to its peak, is
    # u * exp((1 - u^2) / 2) with u = f / f_peak; width between half-amplitude points
    def half(u):
        return math.log(u) + (1 - u * u) / 2 - math.log(0.5)

    return brentq(half, 1.0, 10.0) - brentq(half, 1e-9, 1.0)


def pulse_tau(acq: AcquisitionParams) -> float:
    """Gaussian width tau whose pulse has a -6 dB band of bw * f0 Hz."""
    width_hz = acq.fractional_bandwidth * acq.center_frequency
    f_peak = width_hz / _dog_width_in_peak_units()
    return 1.0 / (2 * math.pi * f_peak)


def synthesize_pulse(acq: AcquisitionParams, t_relative):
    """Bipolar pulse -(t/tau^2) exp(-t^2 / (2 tau^2)) evaluated at ``t_relative`` seconds."""
    tau = pulse_tau(acq)
    t = np.asarray(t_relative, dtype=float)
    out = -(t / tau**2) * np.exp(-(t**2) / (2 * tau**2))
    return out if out.ndim else float(out)


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    phantom_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(phantom_seq), np.random.default_rng(noise_seq)


def clean_channels(
    xs: np.ndarray, zs: np.ndarray, amps: np.ndarray, geom: ArrayGeometry, acq: AcquisitionParams
) -> np.ndarray:
    """Noiseless channel matrix for explicit emitters, accumulated in list order."""
    fs = acq.sampling_frequency
    c = acq.sound_speed
    n = acq.num_samples
    tau = pulse_tau(acq)
    half = int(math.ceil(PULSE_SUPPORT_TAUS * tau * fs))
    offsets = np.arange(-half, half + 1)
    xe = geom.element_positions
    rows = np.arange(geom.num_elements)[:, None]
    out = np.zeros((geom.num_elements, n))
    for x, z, a in zip(xs, zs, amps):
        r = np.hypot(xe - x, z)  # (M,)
        arrival = r / c * fs
        idx = np.floor(arrival).astype(np.int64)[:, None] + offsets[None, :]
        t_rel = (idx - arrival[:, None]) / fs
        vals = (a / r)[:, None] * synthesize_pulse(acq, t_rel)
        keep = (idx >= 0) & (idx < n)
        if keep.all():
            out[rows, idx] += vals
        else:
            rr = np.broadcast_to(rows, idx.shape)
            out[rr[keep], idx[keep]] += vals[keep]
    return out


def simulate_channels(
    phantom: Phantom, geom: ArrayGeometry, acq: AcquisitionParams, noise: NoiseSpec
) -> ChannelFrame:
    """Channel data for ``phantom`` plus white Gaussian noise at ``noise.snr_db``.

    The noise std is the clean-frame rms times 10^(-snr/20); ``snr_db=inf``
    gives a noiseless frame. Deterministic given ``noise.seed``.
    """
    if phantom.is_empty:
        raise ValueError("phantom has no sources")
    phantom_rng, noise_rng = _rngs(noise.seed)
    xs, zs, amps = phantom.realize(phantom_rng)
    samples = clean_channels(xs, zs, amps, geom, acq)
    std = 0.0
    if math.isfinite(noise.snr_db):
        rms = float(np.sqrt(np.mean(samples**2)))
        std = rms * 10 ** (-noise.snr_db / 20)
        samples = samples + noise_rng.normal(0.0, std, size=samples.shape)
    return ChannelFrame(samples=samples, acq=acq, rng_seed=noise.seed, noise_std=std)


def build_scenario(name: str, seed: int = 0) -> tuple[Phantom, NoiseSpec, float]:
    """Phantom, noise and reconstruction sound-speed factor for a named scenario."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    kind, variant = name.split("-", 1)
    if kind == "points":
        sources = tuple(PointSource(0.0, (25 + 5 * i) * 1e-3, 0.1e-3, 1.0) for i in range(11))
        phantom = Phantom(point_sources=sources)
    else:
        phantom = Phantom(cysts=(Cyst(0.0, 20e-3, 4e-3), Cyst(0.0, 29e-3, 4e-3)))
    snr = 0.0 if variant == "0db" else 40.0
    factor = 1.05 if variant == "sos-error" else 1.0
    return phantom, NoiseSpec(snr_db=snr, seed=seed), factor


# Imaging regions: 20 mm x 80 mm for the point targets, 20 mm x 30 mm for the cysts.
SCENARIO_GRIDS = {
    "points": {"lateral_min": -10e-3, "lateral_max": 10e-3, "axial_min": 20e-3, "axial_max": 80e-3},
    "cysts": {"lateral_min": -10e-3, "lateral_max": 10e-3, "axial_min": 10e-3, "axial_max": 40e-3},
}


def scenario_grid(name: str) -> dict:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}")
    return dict(SCENARIO_GRIDS[name.split("-", 1)[0]])


def write_frame(frame: ChannelFrame, path) -> None:
    """Flat little-endian dump: int64 M, int64 N, float64 fs, float64 c, then M*N float64."""
    if frame.is_analytic:
        raise ValueError("only real RF frames can be written")
    m, n = frame.samples.shape
    with open(path, "wb") as fh:
        fh.write(_FRAME_HEADER.pack(m, n, frame.acq.sampling_frequency, frame.acq.sound_speed))
        fh.write(np.ascontiguousarray(frame.samples, dtype="<f8").tobytes())


def read_frame(path, template: AcquisitionParams | None = None) -> ChannelFrame:
    """Inverse of :func:`write_frame`. Centre frequency/bandwidth come from ``template``."""
    raw = Path(path).read_bytes()
    if len(raw) < _FRAME_HEADER.size:
        raise ValueError(f"{path}: truncated frame header")
    m, n, fs, c = _FRAME_HEADER.unpack_from(raw)
    expected = _FRAME_HEADER.size + 8 * m * n
    if m < 1 or n < 1 or len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} does not match header M={m}, N={n}")
    samples = np.frombuffer(raw, dtype="<f8", offset=_FRAME_HEADER.size).reshape(m, n).astype(float)
    base = template or AcquisitionParams()
    acq = AcquisitionParams(
        sampling_frequency=fs,
        sound_speed=c,
        num_samples=n,
        center_frequency=base.center_frequency,
        fractional_bandwidth=base.fractional_bandwidth,
    )
    return ChannelFrame(samples=samples, acq=acq)
