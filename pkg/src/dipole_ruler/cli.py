"""Command-line front end.

Lengths are in wavelengths and rates in units of gamma throughout; angles
are given in degrees on the command line and converted to radians here.
Tables are written as CSV, structured results as JSON, to stdout or
``--out FILE``.  Scans run their points on ``DIPOLE_RULER_THREADS`` worker
threads (default 1) and always write rows in input order.

Exit codes: 0 success, 2 usage or validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import analysis, oracle
from .couplings import (
    SystemConfig,
    distance_with_uncertainty,
    gamma12,
    omega12,
    omega12_near,
)
from .errors import DipoleRulerError, DomainError, OutOfRangeError
from .estimator import VirtualApparatus, run_protocol
from .spectrum import FrequencyGrid, MotionModel, compute_spectrum, default_grid, motion_averaged_spectrum

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
THREADS_ENV = "DIPOLE_RULER_THREADS"


class UsageError(Exception):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer") from None


def _pmap(func, items):
    items = list(items)
    n = _threads()
    if n == 1 or len(items) < 2:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


def parse_range(text: str) -> np.ndarray:
    """``"v"`` or ``"lo:hi:n"`` (inclusive linspace)."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        if len(parts) == 3:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
            if n < 1:
                raise ValueError
            return np.linspace(lo, hi, n)
    except ValueError:
        pass
    raise UsageError(f"bad range {text!r}; expected 'v' or 'lo:hi:n'")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _config(args, z1=None, z12=None, rabi=None) -> SystemConfig:
    return SystemConfig(
        z1=args.z1 if z1 is None else z1,
        z12=args.z12 if z12 is None else z12,
        rabi=args.rabi if rabi is None else rabi,
        phase=math.radians(args.phase),
        detuning=args.detuning,
        theta=math.radians(args.theta),
    )


# -- subcommands --------------------------------------------------------------------------------

def cmd_couplings(args) -> str:
    z = args.z12
    rows = {"z12": z, "omega12": float(omega12(z)), "gamma12": float(gamma12(z)),
            "omega12_near": float(omega12_near(z))}
    if args.format == "csv":
        return _csv(["quantity", "value"], rows.items())
    return _json(rows)


def cmd_spectrum(args) -> str:
    cfg = _config(args)
    grid = FrequencyGrid.parse(args.grid) if args.grid else default_grid(cfg)
    if args.engine == "time-domain":
        if args.motion:
            raise UsageError("--motion is only available with the resolvent engine")
        tr = oracle.spectrum_fft(cfg, oracle.TimeGrid.for_config(cfg, total=args.tmax), grid)
    elif args.motion:
        tr = motion_averaged_spectrum(cfg, MotionModel(args.motion), grid)
    else:
        tr = compute_spectrum(cfg, grid)
    if args.normalize:
        tr = tr.normalized()
    return tr.to_json() + "\n" if args.format == "json" else tr.to_csv()


def _scan_branching(args):
    header = ["z1", "z12", "branching_rabi", "lower", "upper"]
    z12 = float(parse_range(args.z12)[0])
    res = analysis.branching_scan(args.z1, z12, parse_range(args.rabi),
                                  resolution=args.resolution, theta=math.radians(args.theta),
                                  phase=math.radians(args.phase))
    return header, [[args.z1, z12, res.rabi if res.reached else "",
                     "" if res.lower is None else res.lower, "" if res.upper is None else res.upper]]


def _scan_small(args):
    rabi = float(parse_range(args.rabi)[0])
    theta = math.radians(args.theta)

    def one(z12):
        return analysis.deviation_scan_small(args.z1, rabi, [z12], theta=theta)

    rows = [r for chunk in _pmap(one, parse_range(args.z12)) for r in chunk]
    return ["z12", "delta"], rows


def _scan_doublet(args):
    z12 = float(parse_range(args.z12)[0])
    theta = math.radians(args.theta)

    def one(rabi):
        return analysis.deviation_scan_doublet(args.z1, z12, [rabi], theta=theta)

    rows = [r for chunk in _pmap(one, parse_range(args.rabi)) for r in chunk]
    keys = ["rabi", "group_id", "center", "splitting", "deviation"]
    return keys, [[r[k] for k in keys] for r in rows]


def cmd_scan(args) -> str:
    header, rows = {"branching": _scan_branching, "deviation-small": _scan_small,
                    "deviation-doublet": _scan_doublet}[args.kind](args)
    if args.format == "json":
        return _json([dict(zip(header, r)) for r in rows])
    return _csv(header, rows)


def cmd_protocol(args) -> str:
    truth = SystemConfig(args.true_z1, args.true_z12, 1.0, theta=math.radians(args.theta))
    motion = MotionModel(args.motion) if args.motion else None
    app = VirtualApparatus(truth, noise=args.noise, motion=motion, seed=args.seed,
                           max_rabi=args.max_rabi)
    rep = run_protocol(app, locate_small=args.locate, readoff=args.readoff)
    return rep.to_json(indent=2, sort_keys=True) + "\n"


def cmd_invert(args) -> str:
    est = distance_with_uncertainty(args.omega12, args.uncertainty)
    return _json(asdict(est))


# -- parser -------------------------------------------------------------------------------------

def _geometry_flags(p, z12_type=float, require=True):
    p.add_argument("--z1", type=float, default=0.05, help="position of atom 1 (wavelengths)")
    p.add_argument("--z12", type=z12_type, required=require, help="separation (wavelengths)")
    p.add_argument("--theta", type=float, default=90.0, help="observation angle (degrees)")
    p.add_argument("--phase", type=float, default=0.0, help="standing-wave phase (degrees)")
    p.add_argument("--detuning", type=float, default=0.0, help="laser detuning (gamma)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dipole-ruler",
                                     description="Spectroscopic distance measurement of two atoms.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=argparse.SUPPRESS, help="write output to FILE instead of stdout")
    parser.add_argument("--out", default=None, help="write output to FILE instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("couplings", parents=[common], help="dipole-dipole couplings at one separation")
    p.add_argument("--z12", type=float, required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_couplings)

    p = sub.add_parser("spectrum", parents=[common], help="fluorescence spectrum of one configuration")
    _geometry_flags(p)
    p.add_argument("--rabi", type=float, required=True, help="peak Rabi frequency (gamma)")
    p.add_argument("--grid", help="frequency grid lo:hi:n (gamma)")
    p.add_argument("--motion", type=float, default=0.0, help="separation motion amplitude (wavelengths)")
    p.add_argument("--engine", choices=("resolvent", "time-domain"), default="resolvent")
    p.add_argument("--tmax", type=float, default=40.0, help="time window of the time-domain engine")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("scan", parents=[common], help="parameter scans of sideband features")
    p.add_argument("kind", choices=("branching", "deviation-small", "deviation-doublet"))
    p.add_argument("--z1", type=float, default=0.05)
    p.add_argument("--z12", required=True, help="value or lo:hi:n")
    p.add_argument("--rabi", required=True, help="value or lo:hi:n")
    p.add_argument("--theta", type=float, default=90.0)
    p.add_argument("--phase", type=float, default=0.0)
    p.add_argument("--resolution", type=float, default=1.0, help="branching resolution (gamma)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("protocol", parents=[common], help="blind measurement on a virtual apparatus")
    p.add_argument("--true-z1", type=float, default=0.05)
    p.add_argument("--true-z12", type=float, required=True)
    p.add_argument("--theta", type=float, default=90.0)
    p.add_argument("--noise", type=float, default=0.0, help="relative multiplicative noise")
    p.add_argument("--motion", type=float, default=0.0, help="separation motion amplitude")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-rabi", type=float, default=4000.0)
    p.add_argument("--readoff", type=float, default=0.1, help="relative read-off error")
    p.add_argument("--locate", action="store_true", help="fit z1 from the branching drive (small regime)")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("invert", parents=[common], help="separation from a measured dipole-dipole shift")
    p.add_argument("--omega12", type=float, required=True)
    p.add_argument("--uncertainty", type=float, default=0.0)
    p.set_defaults(func=cmd_invert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        text = args.func(args)
    except (UsageError, DomainError, OutOfRangeError) as exc:
        print(f"dipole-ruler: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DipoleRulerError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"dipole-ruler: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"dipole-ruler: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
