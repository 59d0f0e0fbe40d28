"""Incoherent resonance-fluorescence spectrum from resolvent solves.

By the quantum regression theorem the stationary correlation
``<S_i^+(0) S_j^-(tau)>`` evolves with the same generator as the density
matrix, so its half-line Fourier transform is a linear solve with
``L + i delta``.  The coherent part ``<S_i^+><S_j^->`` is removed before the
solve and reported as the elastic weight.

Because ``L`` always has the steady state in its kernel, ``L + i delta`` is
singular at ``delta = 0``.  The solve therefore uses the deflated operator
``L + i delta - |rho_ss><1|``, which coincides with the original one on the
traceless subspace where the subtracted sources live.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .couplings import K, SystemConfig, rabi_at
from .errors import DomainError, NumericError
from .liouvillian import (
    DIM,
    LOWERING,
    RAISING,
    build_liouvillian,
    steady_state,
    trace_row,
    vec,
)

_CHUNK = 2048
CSV_HEADER = ("delta_over_gamma", "intensity")


@dataclass(frozen=True)
class FrequencyGrid:
    """Sample points ``delta = omega - omega_L`` (units of gamma).

    ``windows`` holds extra ``(lo, hi, count)`` blocks merged into the base
    linspace, used for local refinement around features.  ``points``, when
    given, replaces the linspace construction by an explicit sample set.
    """

    start: float
    stop: float
    count: int
    windows: tuple = ()
    points: tuple | None = None

    def __post_init__(self):
        if self.count < 2:
            raise DomainError("a frequency grid needs at least two samples")
        if not self.stop > self.start:
            raise DomainError("grid stop must exceed start")
        object.__setattr__(self, "windows", tuple(tuple(w) for w in self.windows))

    @cached_property
    def samples(self) -> np.ndarray:
        if self.points is not None:
            x = np.array(self.points, dtype=float)
            x.setflags(write=False)
            return x
        parts = [np.linspace(self.start, self.stop, self.count)]
        parts += [np.linspace(lo, hi, int(n)) for lo, hi, n in self.windows]
        x = np.unique(np.concatenate(parts))
        x.setflags(write=False)
        return x

    @property
    def step(self) -> float:
        return (self.stop - self.start) / (self.count - 1)

    @classmethod
    def symmetric(cls, span: float, count: int = 4001) -> "FrequencyGrid":
        return cls(-span, span, count)

    @classmethod
    def from_points(cls, points) -> "FrequencyGrid":
        x = np.asarray(points, dtype=float)
        if x.size < 2 or np.any(np.diff(x) <= 0):
            raise DomainError("grid points must be strictly increasing with >= 2 entries")
        return cls(float(x[0]), float(x[-1]), int(x.size), points=tuple(float(v) for v in x))

    @classmethod
    def parse(cls, text: str) -> "FrequencyGrid":
        """Parse ``"lo:hi:n"``."""
        try:
            lo, hi, n = text.split(":")
            return cls(float(lo), float(hi), int(n))
        except ValueError as exc:
            raise DomainError(f"expected lo:hi:n, got {text!r}") from exc

    def refined(self, center: float, halfwidth: float, factor: int = 10) -> "FrequencyGrid":
        lo = max(self.start, center - halfwidth)
        hi = min(self.stop, center + halfwidth)
        n = max(3, int(math.ceil((hi - lo) / self.step * factor)) + 1)
        return FrequencyGrid(self.start, self.stop, self.count, self.windows + ((lo, hi, n),))

    def to_dict(self) -> dict:
        d = {"start": self.start, "stop": self.stop, "count": self.count,
             "windows": [list(w) for w in self.windows]}
        if self.points is not None:
            d["points"] = list(self.points)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyGrid":
        pts = d.get("points")
        return cls(d["start"], d["stop"], d["count"], tuple(tuple(w) for w in d.get("windows", ())),
                   None if pts is None else tuple(pts))


def default_grid(config: SystemConfig, count: int = 4001) -> FrequencyGrid:
    from .couplings import omega12

    span = 1.5 * max(config.rabi, abs(omega12(config.z12)), 10.0 * config.gamma)
    return FrequencyGrid.symmetric(span, count)


@dataclass(eq=False)
class SpectrumTrace:
    """Sampled incoherent spectrum in arbitrary units.

    ``config`` is ``None`` for readouts that must not reveal the geometry
    (see :class:`dipole_ruler.estimator.VirtualApparatus`); ``controls``
    then records the drive settings used.
    """

    grid: FrequencyGrid
    values: np.ndarray
    elastic_weight: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), complex))
    config: SystemConfig | None = None
    engine: str = "resolvent"
    controls: dict = field(default_factory=dict)

    @property
    def delta(self) -> np.ndarray:
        return self.grid.samples

    def normalized(self) -> "SpectrumTrace":
        peak = float(np.max(self.values))
        scale = 1.0 / peak if peak > 0 else 1.0
        return SpectrumTrace(self.grid, self.values * scale, self.elastic_weight * scale,
                             self.config, self.engine, dict(self.controls))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for d, s in zip(self.delta, self.values):
            w.writerow((repr(float(d)), repr(float(s))))
        return buf.getvalue()

    def to_json(self, **kwargs) -> str:
        doc = {
            "engine": self.engine,
            "config": None if self.config is None else self.config.to_dict(),
            "controls": self.controls,
            "grid": self.grid.to_dict(),
            "elastic_weight": [[{"re": float(z.real), "im": float(z.imag)} for z in row]
                               for row in np.asarray(self.elastic_weight)],
            "delta_over_gamma": [float(x) for x in self.delta],
            "intensity": [float(x) for x in self.values],
        }
        return json.dumps(doc, **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "SpectrumTrace":
        doc = json.loads(text)
        ew = np.array([[c["re"] + 1j * c["im"] for c in row] for row in doc["elastic_weight"]])
        cfg = None if doc["config"] is None else SystemConfig.from_dict(doc["config"])
        return cls(FrequencyGrid.from_dict(doc["grid"]), np.array(doc["intensity"]), ew, cfg,
                   doc.get("engine", "resolvent"), doc.get("controls", {}))


def read_csv(text: str) -> SpectrumTrace:
    """Load an external two-column trace in the package CSV format."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise DomainError(f"expected header {','.join(CSV_HEADER)}")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    x = data[:, 0]
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise DomainError("frequency column must be strictly increasing with >= 2 rows")
    grid = FrequencyGrid(float(x[0]), float(x[-1]), x.size)
    if not np.array_equal(grid.samples, x):
        grid = FrequencyGrid.from_points(x)
    return SpectrumTrace(grid, data[:, 1])


@dataclass(frozen=True)
class _RegressionSetup:
    generator: np.ndarray
    rho: np.ndarray
    sources: np.ndarray  # (16, 2) columns vec(rho S_i^+ - <S_i^+> rho)
    readout: np.ndarray  # (2, 2, 16): phase_ij * vec(S_j^-.T)
    elastic: np.ndarray


def _phase_matrix(config: SystemConfig) -> np.ndarray:
    z = np.array([config.z1, config.z2])
    zij = z[:, None] - z[None, :]
    return np.exp(1j * K * zij * math.cos(config.theta))


def _setup(config: SystemConfig, rabi: tuple | None = None) -> _RegressionSetup:
    lv = build_liouvillian(config, rabi)
    rho = steady_state(lv)
    dipole = np.array([np.trace(rho @ sp) for sp in RAISING])
    sources = np.stack([vec(rho @ RAISING[i] - dipole[i] * rho) for i in range(2)], axis=1)
    phase = _phase_matrix(config)
    # Tr(A Y) = vec(A.T) . vec(Y)
    readout = np.array([[phase[i, j] * vec(LOWERING[j].T) for j in range(2)] for i in range(2)])
    elastic = phase * np.outer(dipole, dipole.conj())
    deflated = lv.matrix - np.outer(vec(rho), trace_row())
    return _RegressionSetup(deflated, rho, sources, readout, elastic)


def _solve(setup: _RegressionSetup, delta: np.ndarray) -> np.ndarray:
    delta = np.asarray(delta, dtype=float)
    out = np.empty(delta.size)
    eye = np.eye(DIM * DIM)
    for start in range(0, delta.size, _CHUNK):
        d = delta[start:start + _CHUNK]
        a = setup.generator[None, :, :] + 1j * d[:, None, None] * eye
        b = np.broadcast_to(-setup.sources, (d.size,) + setup.sources.shape)
        try:
            y = np.linalg.solve(a, b)  # (n, 16, 2)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"resolvent solve failed near delta={d[0]:.6g}") from exc
        s = np.einsum("ijk,nki->n", setup.readout, y)
        out[start:start + d.size] = s.real
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite spectrum values")
    return out


def spectrum_point(config: SystemConfig, delta: float) -> float:
    """Incoherent spectrum at one frequency offset `delta`."""
    return float(_solve(_setup(config), np.array([delta]))[0])


def compute_spectrum(config: SystemConfig, grid: FrequencyGrid | None = None,
                     rabi: tuple | None = None) -> SpectrumTrace:
    """Incoherent spectrum on every sample of `grid` (default: :func:`default_grid`).

    `rabi` optionally fixes the local Rabi frequencies ``(Omega_1, Omega_2)``
    instead of deriving them from the drive profile.
    """
    grid = default_grid(config) if grid is None else grid
    setup = _setup(config, rabi)
    return SpectrumTrace(grid, _solve(setup, grid.samples), setup.elastic, config)


TURNING_POINT = "turning_point_arcsine"
GAUSSIAN = "gaussian"
FIXED_DRIVE = "fixed"
MOVING_DRIVE = "follow"


@dataclass(frozen=True)
class MotionModel:
    """Classical distribution of the separation around its mean.

    ``turning_point_arcsine`` is the time-averaged density of a harmonic
    oscillation with the given amplitude; ``gaussian`` uses an rms of
    ``amplitude / sqrt(2)``.

    With ``drive="fixed"`` the motion modulates the dipole-dipole couplings
    and the emission phase while both atoms keep the local Rabi frequency of
    their mean position; ``drive="follow"`` also samples the standing wave
    at the displaced position of atom 2.
    """

    amplitude: float = 0.005
    distribution: str = TURNING_POINT
    node_count: int = 128
    drive: str = FIXED_DRIVE

    def __post_init__(self):
        if self.amplitude < 0:
            raise DomainError("motional amplitude must be non-negative")
        if self.distribution not in (TURNING_POINT, GAUSSIAN):
            raise DomainError(f"unknown distribution {self.distribution!r}")
        if self.node_count < 1:
            raise DomainError("node_count must be positive")
        if self.drive not in (FIXED_DRIVE, MOVING_DRIVE):
            raise DomainError(f"unknown drive handling {self.drive!r}")

    @property
    def lamb_dicke(self) -> float:
        return K * self.amplitude / 2.0

    def nodes(self, z12: float) -> tuple[np.ndarray, np.ndarray]:
        n = self.node_count
        if self.distribution == TURNING_POINT:
            u = (2 * np.arange(1, n + 1) - 1) * np.pi / (2 * n)
            return z12 + self.amplitude * np.cos(u), np.full(n, 1.0 / n)
        x, w = np.polynomial.hermite.hermgauss(n)
        return z12 + self.amplitude * x, w / np.sqrt(np.pi)


def motion_averaged_spectrum(config: SystemConfig, motion: MotionModel,
                             grid: FrequencyGrid | None = None) -> SpectrumTrace:
    """Average :func:`compute_spectrum` over the separation distribution of `motion`.

    Atom 1 is held at ``config.z1``; only the separation oscillates.  See
    :class:`MotionModel` for how the drive is treated.
    """
    if motion.amplitude >= config.z12:
        raise DomainError("motional amplitude must stay below the mean separation")
    grid = default_grid(config) if grid is None else grid
    if motion.amplitude == 0:
        return compute_spectrum(config, grid)
    zs, ws = motion.nodes(config.z12)
    if np.any(zs <= 0):
        raise DomainError("motional quadrature nodes reach zero separation")
    rabi = None
    if motion.drive == FIXED_DRIVE:
        rabi = (rabi_at(config.z1, config), rabi_at(config.z2, config))
    values = np.zeros(grid.samples.size)
    elastic = np.zeros((2, 2), complex)
    for z, w in zip(zs, ws):
        tr = compute_spectrum(config.replace(z12=float(z)), grid, rabi)
        values += w * tr.values
        elastic += w * tr.elastic_weight
    return SpectrumTrace(grid, values, elastic, config,
                         controls={"motion": {"amplitude": motion.amplitude,
                                              "distribution": motion.distribution,
                                              "node_count": motion.node_count,
                                              "drive": motion.drive}})
