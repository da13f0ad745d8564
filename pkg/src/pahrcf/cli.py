"""Command-line entry point: ``pahrcf run <scenario>`` and ``pahrcf compare <dir>...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .beamform import METHODS
from .phantom import SCENARIOS
from .runner import RunConfig, compare_report, run_scenario


def _methods(text: str) -> tuple[str, ...]:
    if text == "all":
        return METHODS
    names = tuple(m.strip() for m in text.split(",") if m.strip())
    for m in names:
        if m not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {m!r}; choose from {', '.join(METHODS)} or 'all'")
    if not names:
        raise argparse.ArgumentTypeError("no methods given")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pahrcf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate and beamform one scenario")
    r.add_argument("scenario", choices=SCENARIOS)
    r.add_argument("--methods", type=_methods, default=METHODS, help="comma-separated list or 'all'")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", type=Path, default=None, help="output directory (default runs/<scenario>-seed<N>)")
    r.add_argument("--config", type=Path, default=None, help="flat JSON file of parameter overrides")
    r.add_argument("--sos-factor", type=float, dest="sos_factor")
    r.add_argument("--subarray", type=int, dest="subarray_length")
    r.add_argument("--temporal-k", type=int, dest="temporal_half_window")
    r.add_argument("--dl-const", type=float, dest="loading_constant")
    r.add_argument("--dynamic-range", type=float, dest="dynamic_range_db")
    r.add_argument("--real-rf", action="store_true", help="beamform real RF instead of analytic signals")
    r.add_argument("--save-frame", action="store_true", help="also write the channel frame (channels.bin)")

    c = sub.add_parser("compare", help="join metrics tables of several runs")
    c.add_argument("dirs", nargs="+", type=Path)
    c.add_argument("--out", type=Path, default=None, help="write CSV here instead of stdout")
    return p


def _overrides(args) -> dict:
    ov = {}
    if args.config is not None:
        ov.update(json.loads(args.config.read_text()))
    for key in ("sos_factor", "subarray_length", "temporal_half_window", "loading_constant", "dynamic_range_db"):
        v = getattr(args, key)
        if v is not None:
            ov[key] = v
    if args.real_rf:
        ov["analytic"] = False
    if args.save_frame:
        ov["save_frame"] = True
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            out = args.out or Path("runs") / f"{args.scenario}-seed{args.seed}"
            config = RunConfig(args.scenario, args.methods, args.seed, out, _overrides(args))
            result = run_scenario(config)
            print(f"wrote {len(result.manifest['files']) + 1} files to {out}")
        else:
            text = compare_report(args.dirs)
            if args.out is None:
                sys.stdout.write(text)
            else:
                args.out.write_text(text)
    except (ValueError, OSError) as exc:
        print(f"pahrcf: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
