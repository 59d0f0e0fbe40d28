"""Geometry and dipole-dipole coupling formulas.

Internal units: the single-atom decay constant ``gamma`` is the unit of
frequency and the laser wavelength ``lambda`` the unit of length, so the
wave number is ``k = 2*pi``.  Every function below takes and returns values
in these units; :func:`to_si` converts for display only.

The two atoms sit on the standing-wave axis at ``z1`` and ``z2 = z1 + z12``
with parallel dipoles perpendicular to that axis.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, OutOfRangeError

K = 2.0 * math.pi  # wave number in 1/lambda
Z12_MAX = 0.5  # largest separation handled by the inversion routines
BISECTION_TOL = 1e-8
BISECTION_MAXITER = 200


class DriveMode(str, enum.Enum):
    STANDING = "standing"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class SystemConfig:
    """Complete physical scenario for the two-atom system.

    Parameters
    ----------
    z1 : float
        Position of atom 1 in wavelengths.
    z12 : float
        Separation ``z2 - z1`` in wavelengths, must be positive.
    rabi : float
        Peak Rabi frequency of the standing wave (units of gamma).
    phase : float
        Standing-wave phase in radians; the local drive is
        ``rabi * sin(2*pi*z + phase)``.
    detuning : float
        Laser detuning ``omega_L - omega_0`` (units of gamma).
    theta : float
        Observation angle against the interatomic axis, radians.
    drive_mode : DriveMode
        ``uniform`` drives both atoms with the full ``rabi``.
    gamma : float
        Reference decay constant; 1 in the internal unit system.
    """

    z1: float
    z12: float
    rabi: float
    phase: float = 0.0
    detuning: float = 0.0
    theta: float = math.pi / 2
    drive_mode: DriveMode = DriveMode.STANDING
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "drive_mode", DriveMode(self.drive_mode))
        for name in ("z1", "z12", "rabi", "phase", "detuning", "theta", "gamma"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
        if self.z12 <= 0:
            raise DomainError(f"z12 must be positive, got {self.z12!r}")
        if self.rabi < 0:
            raise DomainError(f"rabi must be non-negative, got {self.rabi!r}")
        if self.gamma <= 0:
            raise DomainError(f"gamma must be positive, got {self.gamma!r}")
        if not 0.0 <= self.theta <= math.pi:
            raise DomainError(f"theta must lie in [0, pi], got {self.theta!r}")

    @property
    def z2(self) -> float:
        return self.z1 + self.z12

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["drive_mode"] = self.drive_mode.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in fields})


@dataclass(frozen=True)
class CouplingValues:
    omega12: float
    gamma12: float
    rabi1: float
    rabi2: float
    interference_phase: float


def _check_positive(z):
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("separation must be positive")
    return z


def _scalar_or_array(result):
    return float(result) if np.ndim(result) == 0 else result


def omega12(z12):
    """Coherent dipole-dipole shift for separation `z12` (units of gamma).

    Accepts scalars or arrays.
    """
    x = K * _check_positive(z12)
    c, s = np.cos(x), np.sin(x)
    return _scalar_or_array(1.5 * (-c / x + s / x**2 + c / x**3))


def gamma12(z12):
    """Collective (cross) damping rate for separation `z12` (units of gamma).

    Written as ``1.5 (j0(x) - j1(x) / x)`` with spherical Bessel functions,
    which avoids the cancellation of the elementary form at small ``x``.
    """
    x = K * _check_positive(z12)
    return _scalar_or_array(1.5 * (special.spherical_jn(0, x) - special.spherical_jn(1, x) / x))


def omega12_near(z12):
    """Static near-field limit ``3 / (2 (k z12)^3)`` of :func:`omega12`."""
    x = K * _check_positive(z12)
    return _scalar_or_array(1.5 / x**3)


def rabi_at(z, config: SystemConfig):
    """Local Rabi frequency at position `z` for the drive in `config`."""
    if config.drive_mode is DriveMode.UNIFORM:
        return _scalar_or_array(np.full_like(np.asarray(z, dtype=float), config.rabi))
    return _scalar_or_array(config.rabi * np.sin(K * np.asarray(z, dtype=float) + config.phase))


def coupling_values(config: SystemConfig) -> CouplingValues:
    g = config.gamma
    return CouplingValues(
        omega12=g * omega12(config.z12),
        gamma12=g * gamma12(config.z12),
        rabi1=rabi_at(config.z1, config),
        rabi2=rabi_at(config.z2, config),
        interference_phase=K * config.z12 * math.cos(config.theta),
    )


def invert_omega12(target: float) -> float:
    """Separation in ``(0, 0.5]`` whose dipole-dipole shift equals `target`.

    Uses bracketed bisection, relying on the strict decrease of
    :func:`omega12` on that interval.

    Raises
    ------
    OutOfRangeError
        If `target` is not finite or lies below ``omega12(0.5)``.
    """
    target = float(target)
    floor = omega12(Z12_MAX)
    if not math.isfinite(target) or target < floor:
        raise OutOfRangeError(
            f"omega12 target {target!r} outside invertible range [{floor:.6g}, inf)"
        )
    if target == floor:
        return Z12_MAX
    hi = Z12_MAX
    # near-field guess overestimates the shift slightly, so halve until bracketed
    lo = min((1.5 / target) ** (1.0 / 3.0) / K, Z12_MAX) / 2.0
    while omega12(lo) <= target:
        lo /= 2.0
    for _ in range(BISECTION_MAXITER):
        mid = 0.5 * (lo + hi)
        if omega12(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BISECTION_TOL:
            break
    return 0.5 * (lo + hi)


def d_omega12_dz(z12: float) -> float:
    """Analytic derivative of :func:`omega12` with respect to `z12`."""
    x = K * float(_check_positive(z12))
    c, s = math.cos(x), math.sin(x)
    return 1.5 * K * (s / x + 2 * c / x**2 - 3 * s / x**3 - 3 * c / x**4)


@dataclass(frozen=True)
class DistanceEstimate:
    """Separation inferred from a measured dipole-dipole shift.

    ``sigma`` is the larger one-sided excursion of the inverted interval
    ``[invert(omega + delta), invert(omega - delta)]``; ``sigma_linear`` is
    first-order propagation through the exact derivative.  The near-field
    fields hold the closed-form values ``z (1 - delta / (3 omega))`` and
    ``z delta / (3 omega)`` for comparison.
    """

    value: float
    sigma: float
    sigma_linear: float
    lower: float
    upper: float
    near_field_value: float
    near_field_sigma: float


def distance_with_uncertainty(omega12_meas: float, delta_omega12: float) -> DistanceEstimate:
    """Invert a measured shift and propagate its uncertainty.

    Examples
    --------
    >>> est = distance_with_uncertainty(220.5, 22.0)
    >>> round(est.value, 3), round(est.sigma, 3)
    (0.03, 0.001)
    """
    if not omega12_meas > 0:
        raise OutOfRangeError(f"measured omega12 must be positive, got {omega12_meas!r}")
    if not delta_omega12 >= 0:
        raise DomainError(f"uncertainty must be non-negative, got {delta_omega12!r}")
    z = invert_omega12(omega12_meas)
    floor = omega12(Z12_MAX)
    # upper end of the interval saturates at the half-wavelength limit
    upper = Z12_MAX if omega12_meas - delta_omega12 <= floor else invert_omega12(
        omega12_meas - delta_omega12
    )
    lower = invert_omega12(omega12_meas + delta_omega12)
    if delta_omega12 == 0:
        lower = upper = z
    slope = abs(d_omega12_dz(z))
    near = (1.5 / omega12_meas) ** (1.0 / 3.0) / K
    ratio = delta_omega12 / (3.0 * omega12_meas)
    return DistanceEstimate(
        value=z,
        sigma=max(upper - z, z - lower),
        sigma_linear=delta_omega12 / slope if slope > 0 else math.inf,
        lower=lower,
        upper=upper,
        near_field_value=near * (1.0 - ratio),
        near_field_sigma=near * ratio,
    )


def positions_from_rabi(rabi_meas: float, config: SystemConfig) -> list[float]:
    """Positions within one wavelength whose local Rabi frequency is `rabi_meas`.

    Returns the one or two solutions of ``rabi * sin(2 pi z + phase) = rabi_meas``
    reduced to ``[0, 1)``, sorted.  Only the drive fields of `config`
    (``rabi``, ``phase``) are used.
    """
    if config.drive_mode is DriveMode.UNIFORM:
        raise DomainError("a uniform drive carries no position information")
    if config.rabi <= 0:
        raise DomainError("peak Rabi frequency must be positive")
    if not 0 <= rabi_meas <= config.rabi:
        raise OutOfRangeError(
            f"measured Rabi frequency {rabi_meas!r} outside [0, {config.rabi!r}]"
        )
    a = math.asin(rabi_meas / config.rabi)
    roots = sorted({((a - config.phase) / K) % 1.0, ((math.pi - a - config.phase) / K) % 1.0})
    # the two branches coincide at an antinode
    if len(roots) == 2 and min(roots[1] - roots[0], 1.0 - roots[1] + roots[0]) < 1e-12:
        roots = roots[:1]
    return roots


def to_si(value: float, *, gamma_hz: float | None = None, wavelength_m: float | None = None) -> float:
    """Convert a rate (pass `gamma_hz`) or a length (pass `wavelength_m`) to SI."""
    if (gamma_hz is None) == (wavelength_m is None):
        raise TypeError("pass exactly one of gamma_hz or wavelength_m")
    return value * (gamma_hz if gamma_hz is not None else wavelength_m)
