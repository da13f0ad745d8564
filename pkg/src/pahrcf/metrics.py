"""Image-quality metrics: lateral profiles, -6 dB FWHM, sidelobe level, SNR and CR."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .beamform import BeamformedImage
from .dsp import EDGE_MARGIN

HALF_MAX_DB = -6.0
CSV_COLUMNS = ("method", "scenario", "target_depth_mm", "fwhm_um", "snr_db", "cr_db", "sidelobe_db")


class UndefinedMetric(ValueError):
    """The metric has no meaningful value for this input (reported as NA)."""


@dataclass(frozen=True)
class LateralProfile:
    depth: float
    lateral: np.ndarray = field(repr=False)
    values_db: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Rect:
    lateral_min: float
    lateral_max: float
    axial_min: float
    axial_max: float

    @classmethod
    def centered(cls, lateral: float, axial: float, width: float, height: float) -> "Rect":
        return cls(lateral - width / 2, lateral + width / 2, axial - height / 2, axial + height / 2)

    def mask(self, grid) -> np.ndarray:
        x = grid.x[None, :]
        z = grid.z[:, None]
        return (x >= self.lateral_min) & (x <= self.lateral_max) & (z >= self.axial_min) & (z <= self.axial_max)


@dataclass(frozen=True)
class Disk:
    lateral: float
    axial: float
    radius: float

    def distance(self, grid) -> np.ndarray:
        return np.hypot(grid.x[None, :] - self.lateral, grid.z[:, None] - self.axial)

    def mask(self, grid) -> np.ndarray:
        return self.distance(grid) <= self.radius


@dataclass(frozen=True)
class Annulus:
    lateral: float
    axial: float
    inner_radius: float
    outer_radius: float
    exclude: tuple[Disk, ...] = ()

    def mask(self, grid) -> np.ndarray:
        d = np.hypot(grid.x[None, :] - self.lateral, grid.z[:, None] - self.axial)
        m = (d >= self.inner_radius) & (d <= self.outer_radius)
        for disk in self.exclude:
            m &= ~disk.mask(grid)
        return m


def _interior(mask: np.ndarray) -> np.ndarray:
    # drop rows inside the envelope detector's edge margin
    m = mask.copy()
    m[:EDGE_MARGIN] = False
    m[m.shape[0] - EDGE_MARGIN :] = False
    return m


def extract_profile(image: BeamformedImage, depth: float) -> LateralProfile:
    """Row of a dB image nearest ``depth``, shifted so its own maximum is 0 dB."""
    if image.stage != "db":
        raise ValueError(f"extract_profile expects a db image, got {image.stage!r}")
    row = image.values[image.grid.row_index(depth)]
    return LateralProfile(depth=depth, lateral=image.grid.x.copy(), values_db=row - row.max())


def _crossing(x0, x1, v0, v1, level):
    return x0 + (level - v0) / (v1 - v0) * (x1 - x0)


def _unique_peak(v: np.ndarray) -> int:
    p = int(np.argmax(v))
    if np.count_nonzero(v == v[p]) > 1:
        raise UndefinedMetric("profile peak is not unique")
    return p


def fwhm_minus6db(profile: LateralProfile) -> float:
    """Width in micrometres between the -6 dB crossings nearest the peak.

    Crossings are placed by linear interpolation in dB.
    """
    v = np.asarray(profile.values_db, dtype=float)
    x = np.asarray(profile.lateral, dtype=float)
    p = _unique_peak(v)
    if p < 3 or p > len(v) - 4:
        raise UndefinedMetric("profile peak too close to the edge")
    level = v[p] + HALF_MAX_DB
    i = p
    while i > 0 and v[i - 1] > level:
        i -= 1
    if i == 0:
        raise UndefinedMetric("no -6 dB crossing left of the peak")
    left = _crossing(x[i - 1], x[i], v[i - 1], v[i], level)
    j = p
    while j < len(v) - 1 and v[j + 1] > level:
        j += 1
    if j == len(v) - 1:
        raise UndefinedMetric("no -6 dB crossing right of the peak")
    right = _crossing(x[j], x[j + 1], v[j], v[j + 1], level)
    return (right - left) * 1e6


def mainlobe_bounds(v: np.ndarray, p: int) -> tuple[int | None, int | None]:
    """Indices bounding the mainlobe around ``p`` (None if it runs to the edge).

    Each bound is the first local minimum below the -6 dB level, so ripples
    on a flat-topped lobe do not cut it short.
    """
    level = v[p] + HALF_MAX_DB

    def walk(step):
        i = p
        while 0 <= i + step < len(v):
            if v[i] <= level and v[i + step] >= v[i]:
                return i
            i += step
        return None

    return walk(-1), walk(1)


def sidelobe_level(profile: LateralProfile) -> float:
    """Highest profile value (dB re. peak) outside the mainlobe."""
    v = np.asarray(profile.values_db, dtype=float)
    p = _unique_peak(v)
    left, right = mainlobe_bounds(v, p)
    outside = []
    if left is not None:
        outside.append(v[:left])
    if right is not None:
        outside.append(v[right + 1 :])
    outside = [o for o in outside if o.size]
    if not outside:
        raise UndefinedMetric("profile has no sidelobe region")
    return float(max(o.max() for o in outside) - v[p])


def snr(image: BeamformedImage, target_roi: Rect, background_roi: Rect) -> float:
    """20 log10(peak envelope in the target ROI / envelope std in the background ROI)."""
    if image.stage != "envelope":
        raise ValueError(f"snr expects an envelope image, got {image.stage!r}")
    t = _interior(target_roi.mask(image.grid))
    b = _interior(background_roi.mask(image.grid))
    if not t.any() or not b.any():
        raise ValueError("ROI does not intersect the image interior")
    if (t & b).any():
        raise ValueError("target and background ROIs overlap")
    std = float(np.std(image.values[b]))
    peak = float(np.max(image.values[t]))
    if not std > 0 or not peak > 0:
        raise UndefinedMetric("background std or target peak is zero")
    return 20 * math.log10(peak / std)


def contrast_ratio(image: BeamformedImage, inside_roi, outside_roi) -> float:
    """20 log10(mean envelope inside / mean envelope outside)."""
    if image.stage != "envelope":
        raise ValueError(f"contrast_ratio expects an envelope image, got {image.stage!r}")
    a = _interior(inside_roi.mask(image.grid))
    b = _interior(outside_roi.mask(image.grid))
    if not a.any() or not b.any():
        raise ValueError("ROI does not intersect the image interior")
    if (a & b).any():
        raise ValueError("inside and outside ROIs overlap")
    mean_out = float(np.mean(image.values[b]))
    mean_in = float(np.mean(image.values[a]))
    if not mean_out > 0 or not mean_in > 0:
        raise UndefinedMetric("zero mean envelope in an ROI")
    return 20 * math.log10(mean_in / mean_out)


@dataclass
class MetricsRow:
    method: str
    scenario: str
    target_depth_mm: float
    fwhm_um: float | None = None
    snr_db: float | None = None
    cr_db: float | None = None
    sidelobe_db: float | None = None


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, str):
        return v
    return f"{v:.6f}"


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)

    def add(self, row: MetricsRow) -> None:
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsReport":
        rdr = csv.DictReader(io.StringIO(text))
        if tuple(rdr.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected metrics columns {rdr.fieldnames}")
        rows = []
        for rec in rdr:
            num = {k: (None if rec[k] == "NA" else float(rec[k])) for k in CSV_COLUMNS[2:]}
            rows.append(MetricsRow(rec["method"], rec["scenario"], **num))
        return cls(rows)

    def value(self, method: str, depth_mm: float, metric: str):
        for r in self.rows:
            if r.method == method and abs(r.target_depth_mm - depth_mm) < 1e-9:
                return getattr(r, metric)
        raise KeyError((method, depth_mm, metric))
