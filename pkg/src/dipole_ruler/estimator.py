"""End-to-end distance and position measurement from fluorescence spectra.

The estimators only talk to a :class:`VirtualApparatus`, which exposes the
drive controls and returns spectra.  The geometry it simulates stays hidden
(``_truth``) and readouts carry no configuration, so every estimate below is
derived from spectral features alone.

Positions are reported relative to the standing-wave nodes of the zero-phase
drive and are only defined modulo half a wavelength, the period of the
intensity pattern.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from . import analysis
from .analysis import Peak, find_branching, pair_sidebands, parabolic_vertex
from .couplings import (
    K,
    SystemConfig,
    distance_with_uncertainty,
    invert_omega12,
    omega12,
    positions_from_rabi,
)
from .errors import (
    AmbiguousResultError,
    DipoleRulerError,
    DomainError,
    EscalationError,
    InconclusiveError,
    OutOfRangeError,
)
from .spectrum import FrequencyGrid, MotionModel, SpectrumTrace, compute_spectrum, motion_averaged_spectrum

log = logging.getLogger(__name__)

LARGE, INTERMEDIATE, SMALL = "large", "intermediate", "small"
REGIMES = (LARGE, INTERMEDIATE, SMALL)
HALF = 0.5  # period of the standing-wave intensity, in wavelengths

READOFF = 0.1
PHASE_SHIFT = 0.3
MATCH_TOL = 0.005
PROBE_RABIS = (5.0, 10.0, 20.0, 40.0)
SURVEY_SPAN = 1.5 * omega12(1 / 550)
VISIBLE = 2.5  # sidebands closer than this to line centre are not read
HIDDEN = 10.0  # ... and may hide in the central peak up to this distance
LOG_PROMINENCE = 0.1  # decades
LOG_FLOOR = 1e-10
BIMODAL_PROMINENCE = 0.3  # decades
PAIR_TOL = 2.0  # dipole-dipole coupling makes the two spectral wings slightly unequal


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float

    def to_dict(self) -> dict:
        return {"value": self.value, "sigma": self.sigma}


@dataclass
class MeasurementReport:
    regime: str | None
    z12: Estimate | None = None
    z1: Estimate | None = None
    z2: Estimate | None = None
    evidence: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def est(e):
            return None if e is None else e.to_dict()

        return {"regime": self.regime, "z12": est(self.z12), "z1": est(self.z1),
                "z2": est(self.z2), "evidence": self.evidence, "notes": self.notes,
                "settings": self.settings}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


class VirtualApparatus:
    """Blind spectroscopy set-up around a hidden two-atom geometry.

    Parameters
    ----------
    truth : SystemConfig
        Hidden geometry; its drive fields are overridden by each request.
    noise : float
        Relative amplitude of multiplicative Gaussian noise on each sample.
    motion : MotionModel, optional
        When given, readouts are averaged over the separation motion.
    seed : int
        Seed of the noise generator.
    max_rabi : float
        Largest peak Rabi frequency the laser can deliver.

    Identical requests return the cached readout, so a measurement sequence
    can be replayed without touching the hidden geometry again.
    """

    def __init__(self, truth: SystemConfig, *, noise: float = 0.0, motion: MotionModel | None = None,
                 seed: int = 0, max_rabi: float = 4000.0):
        if noise < 0:
            raise DomainError("noise amplitude must be non-negative")
        if not 0 < truth.z12 <= HALF:
            raise DomainError(f"separation {truth.z12!r} outside (0, 1/2] wavelength")
        self._truth = truth
        self._noise = float(noise)
        self._motion = motion
        self._rng = np.random.default_rng(seed)
        self._cache: dict = {}
        self.max_rabi = float(max_rabi)
        self.theta = truth.theta
        self.requests = 0

    def measure(self, rabi: float, grid: FrequencyGrid, phase: float = 0.0,
                drive_mode: str = "standing") -> SpectrumTrace:
        if not 0 <= rabi <= self.max_rabi:
            raise DomainError(f"requested Rabi frequency {rabi!r} outside [0, {self.max_rabi}]")
        key = (float(rabi), float(phase), str(drive_mode), grid)
        if key not in self._cache:
            self.requests += 1
            cfg = self._truth.replace(rabi=float(rabi), phase=float(phase), drive_mode=drive_mode)
            if self._motion is not None and self._motion.amplitude > 0:
                tr = motion_averaged_spectrum(cfg, self._motion, grid)
            else:
                tr = compute_spectrum(cfg, grid)
            values = tr.values
            if self._noise > 0:
                values = values * (1.0 + self._noise * self._rng.standard_normal(values.size))
            self._cache[key] = SpectrumTrace(grid, values, tr.elastic_weight, None,
                                             controls={"rabi": float(rabi), "phase": float(phase),
                                                       "drive_mode": str(drive_mode)})
        cached = self._cache[key]
        return SpectrumTrace(cached.grid, cached.values.copy(), cached.elastic_weight.copy(), None,
                             controls=dict(cached.controls))


# -- readout helpers ---------------------------------------------------------------------------

def _summary(trace: SpectrumTrace, features) -> dict:
    x = trace.delta
    return {"controls": dict(trace.controls), "grid": [float(x[0]), float(x[-1]), int(x.size)],
            "features": [round(float(f), 6) for f in features]}


def multiscale_grid(span: float, fine: float = 20.0, fine_step: float = 0.05,
                    n_geom: int = 1500) -> FrequencyGrid:
    """Symmetric grid: uniform within ``+/- fine``, geometric out to ``span``."""
    core = np.linspace(-fine, fine, int(round(2 * fine / fine_step)) + 1)
    if span <= fine:
        return FrequencyGrid.from_points(core)
    geom = np.geomspace(fine, span, n_geom)[1:]
    return FrequencyGrid.from_points(np.concatenate([-geom[::-1], core, geom]))


def _refine(measure, center: float, halfwidth: float, target_step: float = 0.01,
            points: int = 121, max_levels: int = 12) -> Peak | None:
    """Zoom onto the maximum near `center` until the grid step is below `target_step`."""
    lo, hi = center - halfwidth, center + halfwidth
    for _ in range(max_levels):
        grid = FrequencyGrid(lo, hi, points)
        tr = measure(grid)
        x, y = tr.delta, tr.values
        k = int(np.argmax(y))
        if k == 0 or k == x.size - 1:
            return None
        step = grid.step
        if step <= target_step:
            pos, h = parabolic_vertex(x[k - 1:k + 2], y[k - 1:k + 2])
            return Peak(pos, h, float(h - min(y[0], y[-1])), float("nan"))
        lo, hi = x[k] - 4 * step, x[k] + 4 * step
    return None


def _log_candidates(trace: SpectrumTrace, prominence: float = LOG_PROMINENCE) -> np.ndarray:
    if not np.max(trace.values) > 0:
        return np.array([], dtype=int)
    # samples far below the maximum are rounding noise of the linear solves
    y = np.log10(np.maximum(trace.values, LOG_FLOOR * np.max(trace.values)))
    idx, _ = signal.find_peaks(y, prominence=prominence)
    return idx


def survey(apparatus, rabi: float, phase: float = 0.0, span: float | None = None,
           grid: FrequencyGrid | None = None, positive_only: bool = False,
           log_scale: bool = True, min_prominence_rel: float = analysis.DEFAULT_PROMINENCE,
           target_step: float = 0.01) -> tuple[list[Peak], SpectrumTrace]:
    """Locate and refine the spectral maxima of one readout.

    Candidates come from a coarse readout (log-domain prominence when
    `log_scale`, otherwise linear prominence relative to the maximum) and are
    then zoomed onto with narrow windows until the step is `target_step`.
    """
    if grid is None:
        grid = multiscale_grid(span if span is not None else SURVEY_SPAN)
    coarse = apparatus.measure(rabi, grid, phase)
    x = coarse.delta
    if log_scale:
        idx = _log_candidates(coarse)
    else:
        idx, _ = signal.find_peaks(coarse.values, prominence=min_prominence_rel * coarse.values.max())
    if positive_only:
        idx = idx[x[idx] > 0]

    def measure(g):
        return apparatus.measure(rabi, g, phase)

    peaks = []
    for k in idx:
        half = max(x[k] - x[k - 1], x[k + 1] - x[k]) * 1.01
        pk = _refine(measure, float(x[k]), half, target_step)
        if pk is not None:
            peaks.append(pk)
    peaks.sort(key=lambda p: p.position)
    # drop duplicates that converged onto the same maximum
    uniq = []
    for p in peaks:
        if not uniq or abs(p.position - uniq[-1].position) > 2 * target_step:
            uniq.append(p)
    return uniq, coarse


def _sidebands(peaks, central_tol: float = 1.0) -> list[Peak]:
    return [p for p in peaks if p.position > central_tol]


# -- regime classification ---------------------------------------------------------------------

def classify_regime(probe_peaks, rabi_probe: float, central_tol: float = 1.0,
                    tolerance: float = 0.05) -> str:
    """Regime from the sideband structure of a weak-drive probe.

    `probe_peaks` is either a trace or an already refined peak list.  The
    dominant (highest) sideband beyond ``3 * rabi_probe`` marks a
    dipole-dipole dominated pair; sidebands no further out than the probe Rabi
    frequency mark independent atoms; anything else is intermediate.

    Raises
    ------
    InconclusiveError
        If the probe shows no sideband at all.
    """
    if isinstance(probe_peaks, SpectrumTrace):
        probe_peaks = analysis.find_peaks(probe_peaks)
    side = _sidebands(probe_peaks, central_tol)
    if not side:
        raise InconclusiveError(f"no sideband features at probe Rabi frequency {rabi_probe:g}")
    dominant = max(side, key=lambda p: p.height)
    if dominant.position > 3.0 * rabi_probe:
        return SMALL
    if all(p.position <= rabi_probe * (1 + tolerance) + central_tol for p in side):
        return LARGE
    return INTERMEDIATE


# -- large separations -------------------------------------------------------------------------

def _circ(a: float, b: float) -> float:
    d = (a - b) % HALF
    return min(d, HALF - d)


@dataclass
class _Reading:
    phase: float
    centers: list
    groups: list
    trace: SpectrumTrace

    @property
    def anchors(self) -> list:
        """Sideband maxima plus midpoints of neighbours (centres of possible doublets)."""
        c = sorted(self.centers)
        return c + [0.5 * (a + b) for a, b in zip(c, c[1:])]


def _read_centers(apparatus, rabi: float, phase: float, doublet_ratio: float = analysis.DOUBLET_RATIO,
                  span_factor: float = 1.3, extra: float = 30.0) -> _Reading:
    span = span_factor * rabi + extra
    grid = FrequencyGrid.symmetric(span, 4001)
    peaks, coarse = survey(apparatus, rabi, phase, grid=grid, log_scale=False)
    ds = pair_sidebands(peaks, tolerance=PAIR_TOL, doublet_ratio=doublet_ratio)
    groups = [g for g in ds.groups if g.center > VISIBLE]
    return _Reading(phase, [g.center for g in groups], groups, coarse)


def _root_candidates(reading: _Reading, rabi: float) -> list:
    """``(position mod 1/2, search half-width)`` for each visible sideband, plus the node."""
    out = []
    cfg = SystemConfig(0.0, 1.0, rabi, phase=reading.phase)
    for nu in reading.anchors:
        for z in positions_from_rabi(min(nu, rabi), cfg):
            z = z % HALF
            if all(_circ(z, c[0]) > 1e-9 for c in out):
                out.append((z, 2 * MATCH_TOL))
    # an atom near a node hides its sidebands in the central peak
    out.append(((-reading.phase / K) % HALF, math.asin(min(1.0, HIDDEN / rabi)) / K))
    return out


def _pair_score(p: float, q: float, readings, rabi: float, resolution: float) -> tuple[float, float]:
    """Worst and rms frequency mismatch, in units of `resolution`, of a position pair.

    Each atom is expected at its AC-Stark sideband, possibly split by the
    dipole-dipole shift of either labelling of the pair.
    """
    d = _circ(p, q)
    shifts = [abs(omega12(x)) for x in (d, HALF - d) if x >= 1e-3]
    errs = []
    for rd in readings:
        pred = [v for v in (_predicted(p, rabi, rd.phase), _predicted(q, rabi, rd.phase))
                if not _hidden(v, rd)]
        if not pred and not rd.centers:
            continue
        if not pred or not rd.centers:
            return math.inf, math.inf
        expected = pred + [v + sgn * w for v in pred for w in shifts for sgn in (-1, 1)]
        errs += [min(abs(o - v) for v in expected) for o in rd.centers]
        # a dominant doublet component pulls the apparent maximum by up to the shift
        slack = max(shifts, default=0.0)
        errs += [max(0.0, min(abs(v - a) for a in rd.anchors) - slack) for v in pred]
    if not errs:
        return math.inf, math.inf
    errs = np.asarray(errs) / resolution
    return float(errs.max()), float(np.sqrt(np.mean(errs**2)))


def _candidate_pairs(readings, rabi: float, resolution: float) -> list:
    """Unordered position pairs ``(rms, p, q)`` consistent with every reading, best first."""
    roots = []
    for rd in readings:
        for z, w in _root_candidates(rd, rabi):
            for r in (z, _fit_position(z, w, readings, rabi)):
                if all(_circ(r, c) > 1e-4 for c in roots):
                    roots.append(r)
    scored = []
    for i, p in enumerate(roots):
        for q in roots[i:]:
            worst, rms = _pair_score(p, q, readings, rabi, resolution)
            if worst <= 1.0:
                scored.append((rms, p, q))
    scored.sort()
    distinct = []
    for sc, p, q in scored:
        if all(min(_circ(p, a) + _circ(q, b), _circ(p, b) + _circ(q, a)) > 2 * MATCH_TOL
               for _, a, b in distinct):
            distinct.append((sc, p, q))
    return distinct


def _predicted(z: float, rabi: float, phase: float) -> float:
    return rabi * abs(math.sin(K * z + phase))


def _hidden(nu: float, reading: _Reading) -> bool:
    """Whether a sideband predicted at `nu` may be missing from `reading`."""
    return nu < VISIBLE or (nu < HIDDEN and not any(c < HIDDEN + 2 for c in reading.centers))


def _fit_position(z0: float, width: float, readings, rabi: float) -> float:
    """Least-squares position against every reading where the atom is visible."""

    def cost(z):
        c = 0.0
        for rd in readings:
            nu = _predicted(z, rabi, rd.phase)
            if not rd.centers or _hidden(nu, rd):
                continue
            c += min((nu - m) ** 2 for m in rd.anchors)
        return c

    res = optimize.minimize_scalar(cost, bounds=(z0 - 2 * width, z0 + 2 * width), method="bounded",
                                   options={"xatol": 1e-9})
    return float(res.x) % HALF


def _position_sigma(z: float, rabi: float, phase: float, readoff: float) -> float:
    nu = _predicted(z, rabi, phase)
    slope = K * math.sqrt(max(rabi**2 - nu**2, 0.0))
    if slope <= 0:
        return HALF / 2
    return min(readoff * nu / slope, HALF / 2)


FIT_STRIDE = 4


def _fit_residuals(params, readings, rabi: float, theta: float) -> np.ndarray:
    z1, z12 = params
    out = []
    for rd in readings:
        m = rd.trace.values[::FIT_STRIDE]
        grid = FrequencyGrid.from_points(rd.trace.delta[::FIT_STRIDE])
        sim = compute_spectrum(SystemConfig(z1, z12, rabi, phase=rd.phase, theta=theta), grid).values
        # the overall detection efficiency is unknown: scale out analytically
        scale = float(m @ sim) / float(sim @ sim)
        out.append((scale * sim - m) / np.max(m))
    return np.concatenate(out)


def fit_geometry(z1: float, z12: float, readings, rabi: float, theta: float = math.pi / 2):
    """Refine ``(z1, z12)`` by matching simulated spectra to the recorded traces.

    Returns ``(z1, z12, rms)``.  Used after the read-off stage, whose sideband
    positions are biased when the dipole-dipole doublets are unresolved.
    """
    lo = (z1 - 0.05, max(1e-3, z12 - 0.05))
    hi = (z1 + 0.05, min(HALF, z12 + 0.05))
    x0 = np.clip([z1, z12], np.add(lo, 1e-9), np.subtract(hi, 1e-9))
    res = optimize.least_squares(_fit_residuals, x0, bounds=(lo, hi), args=(readings, rabi, theta),
                                 diff_step=1e-4, xtol=1e-10, ftol=1e-12, max_nfev=60)
    return float(res.x[0]), float(res.x[1]), float(np.sqrt(np.mean(res.fun**2)))


def _pair_hypotheses(p: float, q: float):
    """Both labellings of two positions (mod 1/2) as ``(z1, z12)`` with 0 < z12 < 1/2."""
    p, q = sorted((p % HALF, q % HALF))
    d = q - p
    return [(p, d), (q, HALF - d)]


def estimate_large(apparatus, rabi: float = 100.0, phase_a: float = 0.0, phase_b: float | None = None,
                   *, shift: float = PHASE_SHIFT, readoff: float = READOFF, refine: bool = True,
                   resolution: float = 2.0, good_fit: float = 1e-3,
                   report: MeasurementReport | None = None) -> MeasurementReport:
    """Positions from the AC-Stark sidebands of two nearly independent atoms.

    Every sideband at `phase_a` (and every midpoint of neighbouring maxima,
    the centre of a possible doublet) yields candidate positions modulo half
    a wavelength, plus the node where an atom hides in the central peak.
    Pairs of candidates are kept when their predicted sidebands match the
    readings at `phase_a` and `phase_b` (default ``phase_a + shift``) within
    `resolution`, allowing for the dipole-dipole splitting; a second shift to
    ``phase_a - shift`` is tried while more than one pair survives.

    The two labellings of a surviving pair (separation ``d`` or ``1/2 - d``)
    are refined by matching simulated spectra to the recorded traces
    (`refine`) and the better match is reported; pairs are tried in order of
    their match until one fits to rms `good_fit`.  Uncertainties follow from
    the relative read-off error `readoff` on the sideband positions at
    `phase_a`.

    Raises
    ------
    AmbiguousResultError
        If no pair of positions matches every reading.
    """
    rep = report if report is not None else MeasurementReport(LARGE)
    rabi = min(rabi, apparatus.max_rabi)
    phases = [phase_a, phase_a + shift if phase_b is None else phase_b, phase_a - shift]
    readings, pairs = [], []
    for ph in phases:
        rd = _read_centers(apparatus, rabi, ph, doublet_ratio=0.0)
        readings.append(rd)
        rep.evidence.append(_summary(rd.trace, rd.centers))
        if len(readings) < 2:
            continue
        pairs = _candidate_pairs(readings, rabi, resolution)
        if len(pairs) == 1:
            break
        rep.notes.append(f"{len(pairs)} candidate position pairs after phase {ph:.3f}")
    if not pairs:
        roots = [z for z, _ in _root_candidates(readings[0], rabi)]
        raise AmbiguousResultError("no position pair matches every reading", roots)
    if len(pairs) > 1:
        rep.notes.append("candidate pairs left to the trace fit: "
                         + "; ".join(f"({p:.4f}, {q:.4f})" for _, p, q in pairs))

    scored = []
    for _, p, q in pairs:
        hyps = [h for h in _pair_hypotheses(p, q) if h[1] > 1e-3]
        if not refine:
            scored += [(float("nan"), z1, z12) for z1, z12 in hyps]
            break
        for z1, z12 in hyps:
            f1, f12, rms = fit_geometry(z1, z12, readings, rabi, apparatus.theta)
            scored.append((rms, f1 % HALF, f12))
        if min(scored)[0] <= good_fit:
            break
    if not scored:
        raise AmbiguousResultError("degenerate positions", [p for _, p, _ in pairs])
    scored.sort(key=lambda t: t[0])
    _, z1, z12 = scored[0]
    if len(scored) > 1:
        rep.notes.append("labelling chosen by trace residual: "
                         + ", ".join(f"z12={h[2]:.4f} (rms {h[0]:.3g})" for h in scored))
    z2 = z1 + z12
    first = readings[0]

    def sigma(z):
        if _predicted(z, rabi, first.phase) >= VISIBLE and first.centers:
            s = _position_sigma(z, rabi, first.phase, readoff)
            if s < 0.05:
                return s
        return min(_position_sigma(z, rabi, rd.phase, readoff) for rd in readings)

    s1, s2 = sigma(z1), sigma(z2)
    rep.z1 = Estimate(z1, s1)
    rep.z2 = Estimate(z2, s2)
    rep.z12 = Estimate(min(z12, HALF), math.hypot(s1, s2))
    rep.settings.update({"rabi_work": rabi, "phases": [rd.phase for rd in readings], "readoff": readoff})
    return rep


# -- intermediate separations -----------------------------------------------------------------

def _doublet_readout(apparatus, rabi: float, phase: float, hint: float):
    span = 1.3 * rabi + 2 * hint + 30
    rd = _read_centers(apparatus, rabi, phase, span_factor=0.0, extra=span)
    doublets = [g for g in rd.groups if g.is_doublet]
    return rd, doublets


def estimate_intermediate(apparatus, rabi_strong: float | None = None, *, hint: float | None = None,
                          readoff: float = READOFF, shift: float = PHASE_SHIFT,
                          report: MeasurementReport | None = None) -> MeasurementReport:
    """Separation from the strong-field doublet splitting, positions from the doublet centres.

    The drive starts at `rabi_strong` (default ``max(200, 10 * hint)``, with
    `hint` a rough dipole-dipole shift from the probe) and doubles until two
    doublets with consistent splittings are resolved.

    Raises
    ------
    EscalationError
        If no doublet resolves up to the apparatus drive limit.
    """
    rep = report if report is not None else MeasurementReport(INTERMEDIATE)
    hint = 10.0 if hint is None else float(hint)
    rabi = max(200.0, 10.0 * hint) if rabi_strong is None else float(rabi_strong)
    rabi = min(rabi, apparatus.max_rabi)
    while True:
        rd, doublets = _doublet_readout(apparatus, rabi, 0.0, hint)
        rep.evidence.append(_summary(rd.trace, [g.center for g in doublets]))
        splits = [g.splitting for g in doublets]
        if len(doublets) >= 2 and max(splits) - min(splits) <= 0.1 * min(splits):
            break
        if rabi >= apparatus.max_rabi:
            raise EscalationError(f"doublets unresolved up to rabi={rabi:g}")
        rep.notes.append(f"doublets unresolved at rabi={rabi:g}; doubling drive")
        rabi = min(2 * rabi, apparatus.max_rabi)

    w12 = 0.5 * float(np.mean(splits[:2]))
    dist = distance_with_uncertainty(w12, readoff * w12)
    rep.z12 = Estimate(dist.value, dist.sigma)
    rep.notes.append(f"omega12 = {w12:.4f} from doublet splitting at rabi={rabi:g}")

    inner, outer = sorted(g.center for g in doublets[:2])
    pairs = []
    for zi in positions_from_rabi(min(inner, rabi), SystemConfig(0.0, 1.0, rabi)):
        for zo in positions_from_rabi(min(outer, rabi), SystemConfig(0.0, 1.0, rabi)):
            for z1, z2 in ((zi % HALF, zo % HALF), (zo % HALF, zi % HALF)):
                mismatch = _circ((z2 - z1) % HALF, dist.value)
                pairs.append((mismatch, z1, z2))
    pairs.sort()
    best = [p for p in pairs if p[0] <= pairs[0][0] + MATCH_TOL]
    if len(best) > 1:
        # mirror images about an antinode: decide with a phase-shifted readout
        rd_b, dbl_b = _doublet_readout(apparatus, rabi, shift, hint)
        rep.evidence.append(_summary(rd_b.trace, [g.center for g in dbl_b]))
        seen = sorted(g.center for g in dbl_b) if len(dbl_b) >= 2 else rd_b.centers

        def score(p):
            pred = sorted((_predicted(p[1], rabi, shift), _predicted(p[1] + dist.value, rabi, shift)))
            if not seen:
                return math.inf
            return sum(min(abs(v - s) for s in seen) for v in pred)

        best.sort(key=score)
        rep.notes.append(f"mirror ambiguity resolved with phase shift {shift:.3f}")
    _, z1, _ = best[0]
    z1 = _fit_position(z1, MATCH_TOL, [rd], rabi) if inner >= VISIBLE else z1
    nu1 = _predicted(z1, rabi, 0.0)
    s1 = _position_sigma(z1, rabi, 0.0, readoff)
    z2 = z1 + dist.value
    s2 = math.hypot(s1, dist.sigma)
    rep.z1 = Estimate(z1, s1)
    rep.z2 = Estimate(z2, s2)
    # independent check: the sideband read for atom 2 against z1 + z12
    nu2 = min((inner, outer), key=lambda c: abs(c - _predicted(z2, rabi, 0.0)))
    offset = min(_circ(z, z2) for z in positions_from_rabi(min(nu2, rabi), SystemConfig(0.0, 1.0, rabi)))
    rep.notes.append(f"rabi1 read as {nu1:.3f}; z2 - z1 cross-check offset {offset:.4f}")
    rep.settings.update({"rabi_strong": rabi, "readoff": readoff})
    return rep


# -- small separations -------------------------------------------------------------------------

def _small_window(hint: float, count: int = 4001) -> FrequencyGrid:
    return FrequencyGrid(hint / 3.0, 3.0 * hint, count)


def _turning_points(apparatus, rabi: float, coarse: SpectrumTrace, separation: float):
    """Refined positions of the two most prominent log-domain maxima of
    `coarse` when both pass BIMODAL_PROMINENCE and lie more than
    `separation` apart, else ``None``."""
    if not np.max(coarse.values) > 0:
        return None
    y = np.log10(np.maximum(coarse.values, LOG_FLOOR * np.max(coarse.values)))
    idx, props = signal.find_peaks(y, prominence=BIMODAL_PROMINENCE)
    if idx.size < 2:
        return None
    x = coarse.delta
    top = sorted(idx[np.argsort(props["prominences"])[::-1][:2]])
    if x[top[1]] - x[top[0]] <= separation:
        return None

    def measure(g):
        return apparatus.measure(rabi, g, 0.0)

    out = []
    for k in top:
        pk = _refine(measure, float(x[k]), max(x[k] - x[k - 1], x[k + 1] - x[k]) * 1.01)
        if pk is None:
            return None
        out.append(pk.position)
    return out


def estimate_small(apparatus, rabi_list=(3.0, 6.0, 12.0), *, hint: float, readoff: float = READOFF,
                   split_ratio: float = 0.1, min_prominence_rel: float = 0.1,
                   report: MeasurementReport | None = None) -> MeasurementReport:
    """Separation from the dipole-dipole sideband extrapolated to zero drive.

    `hint` is the approximate sideband position from the probe.  The sideband
    maximum is read at each drive in `rabi_list` and fitted linearly against
    ``rabi**2``; the intercept is the dipole-dipole shift.  Two well separated
    maxima that persist at every drive indicate motion of the pair; the
    separation is then the mean of the turning-point inversions.  The far
    turning point is usually much weaker, so a second maximum also counts
    when its log-domain prominence exceeds ``BIMODAL_PROMINENCE`` decades.  Maxima
    below `min_prominence_rel` of the window maximum are ignored, which keeps
    noise ripple from posing as a split sideband.
    """
    rep = report if report is not None else MeasurementReport(SMALL)
    grid = _small_window(hint)
    rows, bimodal = [], []
    for rabi in sorted(rabi_list):
        rabi = min(rabi, apparatus.max_rabi)
        peaks, coarse = survey(apparatus, rabi, 0.0, grid=grid, log_scale=False,
                               min_prominence_rel=min_prominence_rel)
        rep.evidence.append(_summary(coarse, [p.position for p in peaks]))
        if not peaks:
            continue
        top = sorted(peaks, key=lambda p: p.height, reverse=True)[:2]
        if len(top) == 2 and abs(top[0].position - top[1].position) > split_ratio * hint:
            bimodal.append(sorted(p.position for p in top))
            continue
        # a weak far maximum only stands out on a log scale
        pair = _turning_points(apparatus, rabi, coarse, split_ratio * hint)
        if pair is not None:
            bimodal.append(pair)
            continue
        if len(top) == 2 and abs(top[0].position - top[1].position) > 2 * grid.step:
            rep.notes.append(f"sideband split at rabi={rabi:g}; reading skipped")
            continue
        rows.append((rabi, top[0].position))

    if bimodal and len(bimodal) == len([r for r in rabi_list]):
        lo, hi = np.mean(bimodal, axis=0)
        za, zb = invert_omega12(lo), invert_omega12(hi)
        z = 0.5 * (za + zb)
        sa = distance_with_uncertainty(lo, readoff * lo).sigma_linear
        sb = distance_with_uncertainty(hi, readoff * hi).sigma_linear
        rep.z12 = Estimate(z, 0.5 * math.hypot(sa, sb))
        rep.notes.append(f"bimodal sideband at {lo:.2f} and {hi:.2f}: separation motion, "
                         f"turning points {za:.4f} and {zb:.4f}")
        rep.settings.update({"rabi_list": list(rabi_list), "readoff": readoff, "bimodal": True})
        return rep
    if not rows:
        raise EscalationError("sideband split at every probed drive; retry with weaker drive")
    if len(rows) == 1:
        w12 = rows[0][1]
    else:
        r = np.array(rows)
        slope, w12 = np.polyfit(r[:, 0] ** 2, r[:, 1], 1)
        rep.notes.append(f"nu_p extrapolated to zero drive: slope {slope:.3g} per rabi^2")
    dist = distance_with_uncertainty(float(w12), readoff * float(w12))
    rep.z12 = Estimate(dist.value, dist.sigma_linear)
    rep.notes.append(f"omega12 = {w12:.4f} from zero-drive extrapolation")
    rep.settings.update({"rabi_list": list(rabi_list), "readoff": readoff, "omega12": float(w12)})
    return rep


def _golden(f, a: float, b: float, tol: float = 2e-4) -> float:
    inv = (math.sqrt(5) - 1) / 2
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


@dataclass
class PositionFit:
    z1: float | None
    branching_rabi: float | None
    sigma: float | None = None
    candidates: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def estimable(self) -> bool:
        return self.z1 is not None


def estimate_z1_small(apparatus, z12_est: float, *, center: float | None = None,
                      rabi_values=None, resolution: float = 0.5, shift: float = PHASE_SHIFT) -> PositionFit:
    """Position of a close pair from the drive at which its sideband branches.

    The branching drive is measured on the apparatus and matched against
    simulated branching drives over ``z1`` by golden-section search; the
    mirror image about the antinode is rejected with a phase-shifted run.
    """
    center = omega12(z12_est) if center is None else center
    if rabi_values is None:
        rabi_values = np.arange(5.0, min(apparatus.max_rabi, 0.5 * center) + 1e-9, 10.0)

    def meas(rabi, grid, phase=0.0):
        return apparatus.measure(rabi, grid, phase)

    measured = find_branching(meas, center, rabi_values, resolution=resolution)
    if not measured.reached:
        return PositionFit(None, None, warnings=["branching not reached in the scanned range"])
    target = measured.rabi
    top = HALF / 2 - z12_est / 2
    span = sorted(v for v in rabi_values)

    def sim_branch(z1, phase=0.0):
        r = analysis.branching_scan(z1, z12_est, span, resolution=resolution, phase=phase,
                                    theta=apparatus.theta)
        return r.rabi if r.reached else 2 * span[-1]

    z1 = _golden(lambda z: abs(sim_branch(z) - target), 1e-3, top)
    h = min(5e-3, z1 - 5e-4, top - z1) if top - z1 > 5e-4 else 0.0
    slope = (sim_branch(z1 + h) - sim_branch(z1 - h)) / (2 * h) if h > 0 else 0.0
    sigma = min(resolution / abs(slope), HALF / 2) if slope else HALF / 2
    fit = PositionFit(z1, target, sigma=sigma)
    # near the antinode the branching drive is flat in z1: when the boundary
    # itself reproduces the measurement the fit cannot exclude it
    if top - z1 < 5e-3 or abs(sim_branch(top) - target) <= 2 * resolution:
        fit.sigma = max(sigma, top - z1)
        fit.warnings.append("fit at the antinode boundary: branching drive is flat there")
    mirror = HALF - z1 - z12_est
    fit.candidates = [z1, mirror]
    if 0 < mirror and abs(mirror - z1) > 2 * MATCH_TOL:
        def meas_b(rabi, grid):
            return apparatus.measure(rabi, grid, shift)

        b_meas = find_branching(meas_b, center, rabi_values, resolution=resolution)
        if b_meas.reached:
            errs = [abs(sim_branch(z, shift) - b_meas.rabi) for z in (z1, mirror)]
            if errs[1] < errs[0]:
                fit.z1 = mirror
                fit.warnings.append("mirror position selected by phase-shifted branching")
    return fit


# -- orchestration -----------------------------------------------------------------------------

def probe(apparatus, rabi_values=PROBE_RABIS, report: MeasurementReport | None = None):
    """Weak-drive survey with escalation; returns ``(regime, rabi, peaks)``."""
    rep = report if report is not None else MeasurementReport(None)
    for rabi in rabi_values:
        rabi = min(rabi, apparatus.max_rabi)
        peaks, coarse = survey(apparatus, rabi)
        rep.evidence.append(_summary(coarse, [p.position for p in _sidebands(peaks)]))
        try:
            regime = classify_regime(peaks, rabi)
        except InconclusiveError as exc:
            rep.notes.append(str(exc) + "; raising drive")
            continue
        return regime, rabi, peaks
    raise InconclusiveError("no spectral features up to the largest probe drive")


def run_protocol(apparatus, *, locate_small: bool = False, readoff: float = READOFF,
                 large_rabi: float = 100.0) -> MeasurementReport:
    """Full measurement sequence: probe, classify, then the regime estimator.

    Stage failures are recorded in ``notes`` and a partial report returned.
    """
    rep = MeasurementReport(None)
    try:
        regime, rabi_probe, peaks = probe(apparatus, report=rep)
    except DipoleRulerError as exc:
        rep.notes.append(f"probe failed: {exc}")
        return rep
    rep.regime = regime
    side = _sidebands(peaks)
    hint = max(side, key=lambda p: p.height).position
    rep.settings.update({"rabi_probe": rabi_probe, "probe_sideband": hint})
    try:
        if regime == SMALL:
            estimate_small(apparatus, hint=hint, readoff=readoff, report=rep)
            if locate_small and rep.z12 is not None:
                fit = estimate_z1_small(apparatus, rep.z12.value, center=rep.settings.get("omega12"))
                rep.notes += fit.warnings
                if fit.estimable:
                    rep.z1 = Estimate(fit.z1, fit.sigma)
                    rep.z2 = Estimate(fit.z1 + rep.z12.value, math.hypot(fit.sigma, rep.z12.sigma))
        elif regime == INTERMEDIATE:
            try:
                estimate_intermediate(apparatus, hint=hint, readoff=readoff, report=rep)
            except DipoleRulerError as exc:
                rep.notes.append(f"intermediate estimator failed ({exc}); using sideband positions")
                estimate_large(apparatus, large_rabi, readoff=readoff, report=rep)
        else:
            estimate_large(apparatus, large_rabi, readoff=readoff, report=rep)
    except DipoleRulerError as exc:
        rep.notes.append(f"{regime} estimator failed: {exc}")
    return rep
