"""Scenario runs: simulate, beamform every method, measure, and write artifacts.

A run directory holds one 16-bit PGM per method, ``profiles.csv``,
``metrics.csv`` and ``manifest.json``. Nothing time- or host-dependent is
written, so identical configs and seeds give byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .beamform import METHODS, BeamformedImage, MVParams, beamform_images
from .dsp import DisplayParams, envelope, log_compress
from .geometry import build_geometry, compute_delay_table
from .metrics import (
    Annulus,
    Disk,
    LateralProfile,
    MetricsReport,
    MetricsRow,
    Rect,
    UndefinedMetric,
    contrast_ratio,
    fwhm_minus6db,
    sidelobe_level,
    snr,
)
from .phantom import SCENARIOS, build_scenario, scenario_grid, simulate_channels, write_frame

# profile depths shown in the figures for each scenario family (mm)
PROFILE_DEPTHS_MM = {
    "points-40db": (20.0, 40.0, 55.0, 70.0),
    "points-0db": (45.0, 55.0),
    "points-sos-error": (45.0, 55.0),
    "cysts-40db": (20.0, 29.0),
    "cysts-0db": (20.0, 29.0),
}

# metrics read profiles over this range so deep sidelobes are not clipped
METRIC_DYNAMIC_RANGE_DB = 300.0
# half-height of the axial search for a point target's peak row
PEAK_SEARCH_HALF = 1e-3
TARGET_ROI = 2e-3
BACKGROUND_ROI = 4e-3
BACKGROUND_OFFSET = 6e-3
CR_INSIDE = 0.75
CR_ANNULUS = (1.25, 1.75)

OVERRIDE_KEYS = (
    "num_elements",
    "pitch",
    "lateral_min",
    "lateral_max",
    "axial_min",
    "axial_max",
    "lateral_step",
    "axial_step",
    "sampling_frequency",
    "sound_speed",
    "num_samples",
    "center_frequency",
    "fractional_bandwidth",
    "sos_factor",
    "subarray_length",
    "temporal_half_window",
    "loading_constant",
    "dynamic_range_db",
    "analytic",
    "save_frame",
)


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    output_dir: Path = Path("runs")
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        methods = tuple(self.methods)
        if not methods:
            raise ValueError("at least one method is required")
        for m in methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        unknown = sorted(set(self.overrides) - set(OVERRIDE_KEYS))
        if unknown:
            raise ValueError(f"unknown override(s): {', '.join(unknown)}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass
class RunResult:
    config: RunConfig
    manifest: dict
    report: MetricsReport
    envelopes: dict[str, BeamformedImage]
    db_images: dict[str, BeamformedImage]


def encode_pgm(image: BeamformedImage, dynamic_range_db: float) -> bytes:
    """16-bit binary PGM: -dynamic_range dB maps to 0, 0 dB to 65535, linear in dB."""
    if image.stage != "db":
        raise ValueError("PGM export expects a db image")
    v = np.clip(image.values, -dynamic_range_db, 0.0)
    level = np.rint((v + dynamic_range_db) / dynamic_range_db * 65535).astype(">u2")
    nz, nx = level.shape
    return f"P5\n{nx} {nz}\n65535\n".encode("ascii") + level.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 65535:
        raise ValueError("not a 16-bit binary PGM")
    nx, nz = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=">u2", count=nx * nz).reshape(nz, nx)


def _resolve(config: RunConfig) -> dict:
    """Every parameter of the run with scenario defaults filled in."""
    phantom, noise, factor = build_scenario(config.scenario, config.seed)
    ov = dict(config.overrides)
    params = scenario_grid(config.scenario)
    params.update({k: ov[k] for k in OVERRIDE_KEYS[:13] if k in ov})
    geom, acq, grid = build_geometry(params)
    mv = MVParams(
        subarray_length=int(ov.get("subarray_length", MVParams.default(geom.num_elements).subarray_length)),
        temporal_half_window=int(ov.get("temporal_half_window", 5)),
        loading_constant=ov.get("loading_constant"),
    )
    mv.check(geom.num_elements)
    display = DisplayParams(float(ov.get("dynamic_range_db", 60.0)))
    sos_factor = float(ov.get("sos_factor", factor))
    if not sos_factor > 0:
        raise ValueError("sos_factor must be positive")
    return {
        "phantom": phantom,
        "noise": noise,
        "geom": geom,
        "acq": acq,
        "grid": grid,
        "mv": mv,
        "display": display,
        "sos_factor": sos_factor,
        "analytic": bool(ov.get("analytic", True)),
        "save_frame": bool(ov.get("save_frame", False)),
    }


def _target_row(env: BeamformedImage, lateral: float, depth: float) -> int:
    # the imaged target sits near depth * sos_factor; take the brightest row nearby
    grid = env.grid
    rows = np.flatnonzero(np.abs(grid.z - depth) <= PEAK_SEARCH_HALF)
    cols = np.flatnonzero(np.abs(grid.x - lateral) <= PEAK_SEARCH_HALF)
    if rows.size == 0 or cols.size == 0:
        return grid.row_index(depth)
    block = env.values[np.ix_(rows, cols)]
    return int(rows[np.unravel_index(np.argmax(block), block.shape)[0]])


def _profile(env: BeamformedImage, row: int) -> LateralProfile:
    r = env.values[row]
    peak = float(r.max())
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(r / peak) if peak > 0 else np.zeros_like(r)
    db = np.clip(db, -METRIC_DYNAMIC_RANGE_DB, 0.0)
    return LateralProfile(depth=float(env.grid.z[row]), lateral=env.grid.x.copy(), values_db=db)


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetric:
        return None


def _fits(grid, rect: Rect) -> bool:
    return grid.lateral_min <= rect.lateral_min and rect.lateral_max <= grid.lateral_max and (
        grid.axial_min <= rect.axial_min and rect.axial_max <= grid.axial_max
    )


def _point_metrics(res, envelopes, scenario):
    report = MetricsReport()
    grid = res["grid"]
    for src in res["phantom"].point_sources:
        depth = src.axial * res["sos_factor"]
        if not grid.axial_min <= depth <= grid.axial_max:
            continue
        target = Rect.centered(src.lateral, depth, TARGET_ROI, TARGET_ROI)
        background = Rect.centered(src.lateral + BACKGROUND_OFFSET, depth, BACKGROUND_ROI, BACKGROUND_ROI)
        # SNR only when both ROIs lie wholly inside the image
        roi_ok = _fits(grid, target) and _fits(grid, background)
        for m, env in envelopes.items():
            prof = _profile(env, _target_row(env, src.lateral, depth))
            report.add(
                MetricsRow(
                    method=m,
                    scenario=scenario,
                    target_depth_mm=round(src.axial * 1e3, 6),
                    fwhm_um=_maybe(fwhm_minus6db, prof),
                    snr_db=_maybe(snr, env, target, background) if roi_ok else None,
                    sidelobe_db=_maybe(sidelobe_level, prof),
                )
            )
    return report


def _cyst_metrics(res, envelopes, scenario):
    report = MetricsReport()
    cysts = res["phantom"].cysts
    f = res["sos_factor"]
    for c in cysts:
        inside = Disk(c.lateral, c.axial * f, CR_INSIDE * c.radius)
        others = tuple(
            Disk(o.lateral, o.axial * f, CR_ANNULUS[0] * o.radius) for o in cysts if o is not c
        )
        ring = Annulus(c.lateral, c.axial * f, CR_ANNULUS[0] * c.radius, CR_ANNULUS[1] * c.radius, others)
        for m, env in envelopes.items():
            report.add(
                MetricsRow(
                    method=m,
                    scenario=scenario,
                    target_depth_mm=round(c.axial * 1e3, 6),
                    cr_db=_maybe(contrast_ratio, env, inside, ring),
                )
            )
    return report


def _profiles_csv(res, envelopes, scenario) -> str:
    grid = res["grid"]
    depths = [d for d in PROFILE_DEPTHS_MM[scenario] if grid.axial_min <= d * 1e-3 * res["sos_factor"] <= grid.axial_max]
    header = ["lateral_mm"]
    cols = []
    for d in depths:
        z = d * 1e-3 * res["sos_factor"]
        for m, env in envelopes.items():
            header.append(f"{m}@{d:g}mm")
            cols.append(_profile(env, _target_row(env, 0.0, z)).values_db)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i, x in enumerate(grid.x):
        w.writerow([f"{x * 1e3:.6f}"] + [f"{c[i]:.6f}" for c in cols])
    return buf.getvalue()


def _manifest(config: RunConfig, res, frame) -> dict:
    def plain(obj):
        return {k: v for k, v in dataclasses.asdict(obj).items()}

    grid = res["grid"]
    return {
        "package_version": __version__,
        "scenario": config.scenario,
        "methods": list(config.methods),
        "seed": config.seed,
        "overrides": {k: config.overrides[k] for k in sorted(config.overrides)},
        "array": plain(res["geom"]),
        "acquisition": plain(res["acq"]),
        "grid": {**plain(grid), "nx": grid.nx, "nz": grid.nz},
        "mv": plain(res["mv"]),
        "display": plain(res["display"]),
        "analytic_signal": res["analytic"],
        "sos_factor": res["sos_factor"],
        "reconstruction_sound_speed": res["acq"].sound_speed * res["sos_factor"],
        "noise": {"snr_db": res["noise"].snr_db, "seed": res["noise"].seed, "std": frame.noise_std},
        "phantom": {
            "point_sources": [plain(s) for s in res["phantom"].point_sources],
            "cysts": [{**plain(c), "num_sources": c.num_sources} for c in res["phantom"].cysts],
        },
        "metrics": {
            "profile_dynamic_range_db": METRIC_DYNAMIC_RANGE_DB,
            "peak_search_half_mm": PEAK_SEARCH_HALF * 1e3,
            "snr_target_roi_mm": TARGET_ROI * 1e3,
            "snr_background_roi_mm": BACKGROUND_ROI * 1e3,
            "snr_background_offset_mm": BACKGROUND_OFFSET * 1e3,
            "cr_inside_radius_fraction": CR_INSIDE,
            "cr_annulus_radius_fractions": list(CR_ANNULUS),
            "profile_depths_mm": list(PROFILE_DEPTHS_MM[config.scenario]),
        },
    }


def _pgm_name(method: str) -> str:
    return method.lower().replace("+", "_") + ".pgm"


def run_scenario(config: RunConfig) -> RunResult:
    """Run one scenario end to end and write its artifacts to ``config.output_dir``."""
    res = _resolve(config)
    frame = simulate_channels(res["phantom"], res["geom"], res["acq"], res["noise"])
    delays = compute_delay_table(
        res["geom"], res["acq"], res["grid"], sound_speed_override=res["acq"].sound_speed * res["sos_factor"]
    )
    rf = beamform_images(frame, delays, config.methods, res["mv"], analytic=res["analytic"])
    envelopes = {m: envelope(img) for m, img in rf.items()}
    db_images = {m: log_compress(e, res["display"]) for m, e in envelopes.items()}

    if config.scenario.startswith("points"):
        report = _point_metrics(res, envelopes, config.scenario)
    else:
        report = _cyst_metrics(res, envelopes, config.scenario)
    manifest = _manifest(config, res, frame)

    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    files = []
    for m, img in db_images.items():
        name = _pgm_name(m)
        (out / name).write_bytes(encode_pgm(img, res["display"].dynamic_range_db))
        files.append(name)
    (out / "profiles.csv").write_text(_profiles_csv(res, envelopes, config.scenario))
    (out / "metrics.csv").write_text(report.to_csv())
    files += ["profiles.csv", "metrics.csv"]
    if res["save_frame"]:
        write_frame(frame, out / "channels.bin")
        files.append("channels.bin")
    manifest["files"] = files
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return RunResult(config, manifest, report, envelopes, db_images)


def _json_default(v):
    if isinstance(v, float) and math.isinf(v):
        return str(v)
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


# ---------------------------------------------------------------- comparison

# lower is better for these metrics, higher for the rest
LOWER_IS_BETTER = {"fwhm_um": True, "sidelobe_db": True, "snr_db": False, "cr_db": False}
# largest spread across seeds still flagged consistent: about twice the worst
# spread seen over 5 seeds (fwhm 2.0 um, snr 3.0 dB, cr 3.3 dB, sidelobe 9.8 dB)
SEED_TOLERANCE = {"fwhm_um": 5.0, "snr_db": 6.0, "cr_db": 7.0, "sidelobe_db": 20.0}
_GRID_KEYS = ("lateral_min", "lateral_max", "axial_min", "axial_max", "lateral_step", "axial_step")


def _load_run(path: Path):
    path = Path(path)
    man_path, met_path = path / "manifest.json", path / "metrics.csv"
    if not man_path.is_file() or not met_path.is_file():
        raise FileNotFoundError(f"{path}: missing manifest.json or metrics.csv")
    manifest = json.loads(man_path.read_text())
    if "grid" not in manifest or "scenario" not in manifest:
        raise ValueError(f"{path}: manifest lacks grid/scenario")
    return manifest, met_path.read_text()


def compare_report(run_dirs) -> str:
    """Join metrics tables from several run directories.

    A single directory is passed through unchanged. With several, each row is
    tagged with its run and seed, ranked among methods at its depth (1 = best),
    set against DAS, and flagged for consistency with matching rows of other
    runs of the same scenario.
    """
    run_dirs = [Path(p) for p in run_dirs]
    if not run_dirs:
        raise ValueError("no run directories given")
    loaded = [_load_run(p) for p in run_dirs]
    if len(loaded) == 1:
        return loaded[0][1]

    ref_grid = {}
    for (man, _), p in zip(loaded, run_dirs):
        g = {k: man["grid"][k] for k in _GRID_KEYS}
        sc = man["scenario"]
        if sc in ref_grid and ref_grid[sc] != g:
            raise ValueError(f"{p}: imaging grid differs from another {sc} run")
        ref_grid.setdefault(sc, g)
    steps = {(g["lateral_step"], g["axial_step"]) for g in ref_grid.values()}
    if len(steps) > 1:
        raise ValueError("runs use different grid steps")

    rows = []
    for (man, text), p in zip(loaded, run_dirs):
        for r in MetricsReport.from_csv(text).rows:
            rows.append((p.name, man["seed"], r))

    metrics = list(LOWER_IS_BETTER)
    cols = ["run", "seed", *MetricsReport().to_csv().strip().split(",")]
    cols += [f"{m}_rank" for m in metrics] + ["fwhm_ratio_das"]
    cols += [f"{m}_vs_das" for m in metrics if m != "fwhm_um"]
    cols += [f"{m}_consistent" for m in metrics]

    def group(run, r):
        return [x for x in rows if x[0] == run and x[2].scenario == r.scenario and x[2].target_depth_mm == r.target_depth_mm]

    def peers(r):
        return [x[2] for x in rows if x[2].scenario == r.scenario and x[2].method == r.method and x[2].target_depth_mm == r.target_depth_mm]

    def fmt(v):
        if v is None:
            return "NA"
        if isinstance(v, bool):
            return "yes" if v else "NO"
        if isinstance(v, (int, np.integer)):
            return str(v)
        return f"{v:.6f}"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for run, seed, r in rows:
        same = [x[2] for x in group(run, r)]
        das = next((x for x in same if x.method == "DAS"), None)
        out = [run, seed, r.method, r.scenario, r.target_depth_mm, r.fwhm_um, r.snr_db, r.cr_db, r.sidelobe_db]
        for m in metrics:
            v = getattr(r, m)
            vals = [getattr(x, m) for x in same if getattr(x, m) is not None]
            if v is None:
                out.append(None)
            elif LOWER_IS_BETTER[m]:
                out.append(1 + sum(x < v for x in vals))
            else:
                out.append(1 + sum(x > v for x in vals))
        ratio = None
        if das is not None and r.fwhm_um is not None and das.fwhm_um:
            ratio = das.fwhm_um / r.fwhm_um
        out.append(ratio)
        for m in metrics:
            if m == "fwhm_um":
                continue
            v, ref = getattr(r, m), getattr(das, m) if das is not None else None
            out.append(None if v is None or ref is None else v - ref)
        for m in metrics:
            vals = [getattr(x, m) for x in peers(r) if getattr(x, m) is not None]
            if getattr(r, m) is None:
                out.append(None)
            else:
                out.append(max(vals) - min(vals) <= SEED_TOLERANCE[m])
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in out])
    return buf.getvalue()
