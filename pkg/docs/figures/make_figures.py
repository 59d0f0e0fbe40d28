"""Regenerate the data behind the spectra and scans as CSV files.

Usage::

    python3 docs/figures/make_figures.py [outdir]

Each block below states what the curve shows and which library call
produces it.  Plotting is left to the reader's tool of choice.
"""
import csv
import sys
from pathlib import Path

import numpy as np

from dipole_ruler.analysis import deviation_scan_doublet, deviation_scan_small
from dipole_ruler.couplings import SystemConfig
from dipole_ruler.spectrum import FrequencyGrid, MotionModel, compute_spectrum, motion_averaged_spectrum


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}")


def main(outdir="figures-out"):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)

    # Spectra of a pair at z1 = 0.05.  Far apart (z12 = 0.3) each atom shows its
    # own Mollow sidebands at its local Rabi frequency; at z12 = 0.08 every
    # sideband splits into a doublet of width about 2 omega12; at z12 = 0.03 the
    # exchange shift dominates and a single sideband sits near omega12 = 220.
    panels = {
        "wide_rabi100": (SystemConfig(0.05, 0.3, 100.0), FrequencyGrid(-120, 120, 4801)),
        "mid_rabi20": (SystemConfig(0.05, 0.08, 20.0), FrequencyGrid(-60, 60, 2401)),
        "mid_rabi200": (SystemConfig(0.05, 0.08, 200.0), FrequencyGrid(-200, 200, 8001)),
        "close_rabi20": (SystemConfig(0.05, 0.03, 20.0), FrequencyGrid(-300, 300, 12001)),
    }
    for name, (cfg, grid) in panels.items():
        (out / f"{name}.csv").write_text(compute_spectrum(cfg, grid).normalized().to_csv())
        print(f"wrote {out / f'{name}.csv'}")

    # Thermal motion of the close pair with amplitude 0.005: the sideband of
    # the plain spectrum is replaced by maxima at the exchange shifts of the
    # turning points z12 = 0.035 and 0.025.
    grid = FrequencyGrid(100, 420, 3201)
    avg = motion_averaged_spectrum(SystemConfig(0.05, 0.03, 20.0), MotionModel(0.005, node_count=128), grid)
    (out / "close_motion.csv").write_text(avg.normalized().to_csv())
    print(f"wrote {out / 'close_motion.csv'}")

    # Doublet splitting minus 2 omega12 against drive for z12 = 0.08.
    rows = deviation_scan_doublet(0.05, 0.08, np.arange(100.0, 301.0, 25.0))
    write_rows(out / "doublet_deviation.csv", ["rabi", "center", "splitting", "deviation"],
               [(r["rabi"], r["center"], r["splitting"], r["deviation"]) for r in rows])

    # Position of the dipole-dipole sideband relative to omega12 against separation,
    # at weak drive (single branch) and at strong drive (branches appear).
    z12 = np.linspace(0.01, 0.05, 41)
    for rabi in (3.0, 80.0):
        write_rows(out / f"sideband_deviation_rabi{int(rabi)}.csv", ["z12", "nu_minus_omega12"],
                   deviation_scan_small(0.05, rabi, z12))


if __name__ == "__main__":
    main(*sys.argv[1:])
