"""Spectroscopic distance and position measurement of two dipole-coupled atoms.

Lengths are in units of the laser wavelength and rates in units of the
single-atom decay constant gamma.
"""

from .couplings import (
    DistanceEstimate,
    DriveMode,
    SystemConfig,
    coupling_values,
    distance_with_uncertainty,
    gamma12,
    invert_omega12,
    omega12,
    omega12_near,
    positions_from_rabi,
    rabi_at,
)
from .errors import DipoleRulerError
from .estimator import MeasurementReport, VirtualApparatus, classify_regime, run_protocol
from .liouvillian import build_liouvillian, steady_state
from .spectrum import (
    FrequencyGrid,
    MotionModel,
    SpectrumTrace,
    compute_spectrum,
    motion_averaged_spectrum,
    spectrum_point,
)

__version__ = "0.1.0"

__all__ = [
    "DipoleRulerError",
    "DistanceEstimate",
    "DriveMode",
    "FrequencyGrid",
    "MeasurementReport",
    "MotionModel",
    "SpectrumTrace",
    "SystemConfig",
    "VirtualApparatus",
    "build_liouvillian",
    "classify_regime",
    "compute_spectrum",
    "coupling_values",
    "distance_with_uncertainty",
    "gamma12",
    "invert_omega12",
    "motion_averaged_spectrum",
    "omega12",
    "omega12_near",
    "positions_from_rabi",
    "rabi_at",
    "run_protocol",
    "spectrum_point",
    "steady_state",
]
