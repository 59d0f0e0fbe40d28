"""Spectral feature extraction and the parameter scans built on it.

Peaks are located with :func:`scipy.signal.find_peaks` (prominence filter)
and refined by a three-point parabola through the sampled maximum.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .couplings import SystemConfig, omega12
from .spectrum import FrequencyGrid, SpectrumTrace, compute_spectrum

DEFAULT_PROMINENCE = 0.01
DOUBLET_RATIO = 0.5


@dataclass(frozen=True)
class Peak:
    position: float
    height: float
    prominence: float
    width_estimate: float


def parabolic_vertex(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Vertex ``(x, y)`` of the parabola through three (possibly uneven) samples."""
    x0, x1, x2 = x
    y0, y1, y2 = y
    d0, d2 = x0 - x1, x2 - x1
    denom = d0 * d2 * (d0 - d2)
    a = (d2 * (y0 - y1) - d0 * (y2 - y1)) / denom
    b = (d0 * d0 * (y2 - y1) - d2 * d2 * (y0 - y1)) / denom
    if a >= 0:
        return float(x1), float(y1)
    shift = -b / (2 * a)
    # a true local maximum keeps the vertex between its neighbours
    shift = min(max(shift, d0), d2)
    return float(x1 + shift), float(y1 + b * shift + a * shift * shift)


def peaks_xy(x: np.ndarray, y: np.ndarray, min_prominence_rel: float = DEFAULT_PROMINENCE,
             reference: float | None = None) -> list[Peak]:
    """Local maxima of ``y(x)`` whose prominence exceeds
    ``min_prominence_rel * reference`` (default reference: ``max(y)``)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size < 3:
        return []
    ref = float(np.max(y)) if reference is None else float(reference)
    if not ref > 0:
        return []
    idx, props = signal.find_peaks(y, prominence=min_prominence_rel * ref)
    if idx.size == 0:
        return []
    widths = signal.peak_widths(y, idx, rel_height=0.5, prominence_data=(
        props["prominences"], props["left_bases"], props["right_bases"]))[0]
    mean_step = np.gradient(x)[idx]
    out = []
    for k, p, w, st in zip(idx, props["prominences"], widths, mean_step):
        pos, h = parabolic_vertex(x[k - 1:k + 2], y[k - 1:k + 2])
        out.append(Peak(pos, h, float(p), float(w * st)))
    return sorted(out, key=lambda pk: pk.position)


def find_peaks(trace: SpectrumTrace, min_prominence_rel: float = DEFAULT_PROMINENCE) -> list[Peak]:
    """Prominent local maxima of `trace`, sorted by position."""
    return peaks_xy(trace.delta, trace.values, min_prominence_rel)


@dataclass(frozen=True)
class SidebandGroup:
    """One sideband structure on the positive side: a singlet or a doublet.

    ``peaks`` are the member peaks folded to ``|delta|``; ``splitting`` is
    zero for singlets.
    """

    peaks: tuple
    group_id: int

    @property
    def center(self) -> float:
        return float(np.mean([p.position for p in self.peaks]))

    @property
    def splitting(self) -> float:
        pos = [p.position for p in self.peaks]
        return float(max(pos) - min(pos))

    @property
    def is_doublet(self) -> bool:
        return len(self.peaks) == 2


@dataclass(frozen=True)
class DoubletSet:
    groups: tuple
    central: tuple = ()
    unpaired: tuple = ()
    tolerance: float = 1.0
    doublet_ratio: float = DOUBLET_RATIO

    def peaks(self) -> list[Peak]:
        """Signed peak list equivalent to this grouping (for re-grouping)."""
        out = list(self.central) + list(self.unpaired)
        for g in self.groups:
            for p in g.peaks:
                out.append(p)
                out.append(Peak(-p.position, p.height, p.prominence, p.width_estimate))
        return sorted(out, key=lambda pk: pk.position)

    def signature(self) -> list:
        return [[round(p.position, 9) for p in g.peaks] for g in self.groups]

    def to_json(self, **kwargs) -> str:
        rows = []
        for g in self.groups:
            rows += [{"position": p.position, "height": p.height, "prominence": p.prominence,
                      "group_id": g.group_id} for p in g.peaks]
        for p in self.central:
            rows.append({"position": p.position, "height": p.height, "prominence": p.prominence,
                         "group_id": "central"})
        for p in self.unpaired:
            rows.append({"position": p.position, "height": p.height, "prominence": p.prominence,
                         "group_id": None})
        return json.dumps({"peaks": rows,
                           "doublets": [{"group_id": g.group_id, "center": g.center,
                                         "splitting": g.splitting} for g in self.groups],
                           "tolerance": self.tolerance, "doublet_ratio": self.doublet_ratio},
                          **kwargs)


def pair_sidebands(peaks: Sequence[Peak], tolerance: float = 1.0,
                   doublet_ratio: float = DOUBLET_RATIO) -> DoubletSet:
    """Match mirror-image peaks and group them into sideband structures.

    A peak at ``+nu`` pairs with one at ``-nu`` within `tolerance`; peaks
    within `tolerance` of zero form the central feature.  Adjacent paired
    magnitudes closer than ``doublet_ratio`` times their mean distance from
    zero form a doublet.
    """
    central = [p for p in peaks if abs(p.position) <= tolerance]
    pos = sorted((p for p in peaks if p.position > tolerance), key=lambda p: p.position)
    neg = [p for p in peaks if p.position < -tolerance]
    used = set()
    folded, unpaired = [], []
    for p in pos:
        best, best_err = None, tolerance
        for k, q in enumerate(neg):
            err = abs(p.position + q.position)
            if k not in used and err <= best_err:
                best, best_err = k, err
        if best is None:
            unpaired.append(p)
            continue
        used.add(best)
        q = neg[best]
        folded.append(Peak(0.5 * (p.position - q.position), 0.5 * (p.height + q.height),
                           min(p.prominence, q.prominence), 0.5 * (p.width_estimate + q.width_estimate)))
    unpaired += [q for k, q in enumerate(neg) if k not in used]

    groups, k = [], 0
    while k < len(folded):
        a = folded[k]
        if k + 1 < len(folded):
            b = folded[k + 1]
            if b.position - a.position < doublet_ratio * 0.5 * (a.position + b.position):
                groups.append(SidebandGroup((a, b), len(groups)))
                k += 2
                continue
        groups.append(SidebandGroup((a,), len(groups)))
        k += 1
    return DoubletSet(tuple(groups), tuple(central), tuple(sorted(unpaired, key=lambda p: p.position)),
                      tolerance, doublet_ratio)


def _sideband_window(center: float, rabi: float, step: float) -> FrequencyGrid:
    lo = max(0.5 * center, center - 20.0 - 0.2 * rabi)
    hi = center + 20.0 + 0.8 * rabi
    n = int(math.ceil((hi - lo) / step)) + 1
    return FrequencyGrid(lo, hi, n)


def sideband_peaks(trace: SpectrumTrace, min_prominence_rel: float = DEFAULT_PROMINENCE) -> list[Peak]:
    """Peaks of a windowed trace, prominence measured against the window maximum."""
    return peaks_xy(trace.delta, trace.values, min_prominence_rel)


def deviation_scan_small(z1: float, rabi: float, z12_values: Sequence[float], *,
                         step: float = 0.05, theta: float = math.pi / 2,
                         min_prominence_rel: float = DEFAULT_PROMINENCE) -> list[tuple[float, float]]:
    """Rows ``(z12, nu_p - omega12)`` for the sideband near ``+omega12``.

    Where the sideband is split into two maxima both branches are emitted,
    lower one first.
    """
    rows = []
    for z12 in z12_values:
        w12 = omega12(z12)
        cfg = SystemConfig(z1, z12, rabi, theta=theta)
        tr = compute_spectrum(cfg, _sideband_window(w12, rabi, step))
        found = sideband_peaks(tr, min_prominence_rel)
        if not found:
            k = int(np.argmax(tr.values))
            rows.append((float(z12), float(tr.delta[k] - w12)))
            continue
        top = sorted(found, key=lambda p: p.height, reverse=True)[:2]
        for p in sorted(top, key=lambda p: p.position):
            rows.append((float(z12), p.position - w12))
    return rows


def deviation_scan_doublet(z1: float, z12: float, rabi_values: Sequence[float], *,
                           step: float = 0.05, theta: float = math.pi / 2,
                           min_prominence_rel: float = DEFAULT_PROMINENCE) -> list[dict]:
    """Doublet splittings and their deviation from ``2 omega12`` against drive."""
    w12 = omega12(z12)
    rows = []
    for rabi in rabi_values:
        cfg = SystemConfig(z1, z12, rabi, theta=theta)
        span = 1.2 * rabi + 2 * abs(w12) + 20.0
        tr = compute_spectrum(cfg, FrequencyGrid(-span, span, int(2 * span / step) + 1))
        ds = pair_sidebands(find_peaks(tr, min_prominence_rel))
        for g in ds.groups:
            if g.is_doublet:
                rows.append({"rabi": float(rabi), "group_id": g.group_id, "center": g.center,
                             "splitting": g.splitting, "deviation": g.splitting - 2 * w12})
    return rows


Measure = Callable[[float, FrequencyGrid], SpectrumTrace]


@dataclass
class BranchingResult:
    """Drive at which the dipole-dipole sideband first shows two maxima.

    ``rabi`` is ``None`` when no splitting occurred in the scanned range.
    """

    rabi: float | None
    lower: float | None = None
    upper: float | None = None
    evaluations: list = field(default_factory=list)

    @property
    def reached(self) -> bool:
        return self.rabi is not None


def is_split(trace: SpectrumTrace, min_prominence_rel: float = DEFAULT_PROMINENCE) -> bool:
    found = sideband_peaks(trace, min_prominence_rel)
    if len(found) < 2:
        return False
    step = float(np.median(np.diff(trace.delta)))
    top = sorted(found, key=lambda p: p.prominence, reverse=True)[:2]
    return abs(top[0].position - top[1].position) > 2 * step


def find_branching(measure: Measure, center: float, rabi_values: Sequence[float], *,
                   step: float = 0.1, resolution: float = 1.0,
                   min_prominence_rel: float = DEFAULT_PROMINENCE) -> BranchingResult:
    """Branching drive for an arbitrary spectrum source.

    `measure(rabi, grid)` returns a trace; `center` is the expected
    sideband position (the dipole-dipole shift).  The first split value in
    the increasing `rabi_values` is bracketed and bisected to +/- `resolution`.
    """
    evaluations = []

    def split_at(rabi):
        tr = measure(rabi, _sideband_window(center, rabi, step))
        s = is_split(tr, min_prominence_rel)
        evaluations.append((float(rabi), s))
        return s

    values = sorted(float(v) for v in rabi_values)
    prev = None
    for v in values:
        if split_at(v):
            if prev is None:
                return BranchingResult(v, None, v, evaluations)
            lo, hi = prev, v
            while hi - lo > 2 * resolution:
                mid = 0.5 * (lo + hi)
                if split_at(mid):
                    hi = mid
                else:
                    lo = mid
            return BranchingResult(0.5 * (lo + hi), lo, hi, evaluations)
        prev = v
    return BranchingResult(None, evaluations=evaluations)


def branching_scan(z1: float, z12: float, rabi_values: Sequence[float], *,
                   step: float = 0.1, resolution: float = 1.0, theta: float = math.pi / 2,
                   phase: float = 0.0, min_prominence_rel: float = DEFAULT_PROMINENCE) -> BranchingResult:
    """Branching drive of a simulated pair at (`z1`, `z12`)."""

    def measure(rabi, grid):
        return compute_spectrum(SystemConfig(z1, z12, rabi, phase=phase, theta=theta), grid)

    return find_branching(measure, omega12(z12), rabi_values, step=step,
                          resolution=resolution, min_prominence_rel=min_prominence_rel)
