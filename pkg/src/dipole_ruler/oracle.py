"""Time-domain cross-check of the resolvent spectrum.

Nothing here reuses the superoperator assembly of :mod:`liouvillian`: the
master equation is evaluated directly on 4x4 matrices, propagated with the
classical fourth-order Runge-Kutta scheme, and the regression correlations
are Fourier transformed by trapezoidal quadrature (evaluated as a chirp-z
transform on uniform frequency grids).  Because the equation is
linear with constant coefficients, one RK4 step is a fixed linear map; it is
tabulated once by stepping the 16 matrix units, and repeated steps are
applied as matrix products.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .couplings import K, SystemConfig, gamma12, omega12, rabi_at
from .errors import StepSizeError
from .spectrum import FrequencyGrid, SpectrumTrace

_SM = np.array([[0, 1], [0, 0]], dtype=complex)
_S_MINUS = (np.kron(_SM, np.eye(2)), np.kron(np.eye(2), _SM))
_S_PLUS = tuple(s.conj().T for s in _S_MINUS)
_BLOCK = 4096


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``tau_k = k dt`` for ``k = 0 .. steps``."""

    dt: float
    steps: int

    def __post_init__(self):
        if not self.dt > 0 or self.steps < 1:
            raise ValueError("TimeGrid needs dt > 0 and steps >= 1")

    @property
    def total(self) -> float:
        return self.dt * self.steps

    @classmethod
    def for_config(cls, config: SystemConfig, total: float = 20.0, resolution: float = 0.01) -> "TimeGrid":
        """Step ``resolution / max(rate)`` over a window of length `total` (1/gamma)."""
        fastest = max(config.rabi, abs(omega12(config.z12)), abs(config.detuning), config.gamma)
        dt = resolution / fastest
        return cls(dt, int(math.ceil(total / dt)))


def master_rhs(config: SystemConfig):
    """Right-hand side ``rho -> d rho / dt`` of the collective master equation."""
    w12 = config.gamma * omega12(config.z12)
    g = np.array([[1.0, gamma12(config.z12)], [gamma12(config.z12), 1.0]]) * config.gamma
    r = (rabi_at(config.z1, config), rabi_at(config.z2, config))
    sp, sm = _S_PLUS, _S_MINUS
    h = sum(-config.detuning * sp[i] @ sm[i] + 0.5 * r[i] * (sp[i] + sm[i]) for i in range(2))
    h = h + w12 * (sp[0] @ sm[1] + sp[1] @ sm[0])

    def rhs(rho):
        out = -1j * (h @ rho - rho @ h)
        for i in range(2):
            for j in range(2):
                # [S_i^+, S_j^- rho] - [S_j^-, rho S_i^+]
                out -= g[i, j] * (sp[i] @ sm[j] @ rho - 2 * sm[j] @ rho @ sp[i] + rho @ sp[i] @ sm[j])
        return out

    return rhs


def rk4_step(rhs, rho, dt):
    k1 = rhs(rho)
    k2 = rhs(rho + 0.5 * dt * k1)
    k3 = rhs(rho + 0.5 * dt * k2)
    k4 = rhs(rho + dt * k3)
    return rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_map(config: SystemConfig, dt: float) -> np.ndarray:
    """Matrix of one RK4 step acting on row-major flattened 4x4 matrices."""
    rhs = master_rhs(config)
    cols = []
    for n in range(16):
        unit = np.zeros(16, dtype=complex)
        unit[n] = 1.0
        cols.append(rk4_step(rhs, unit.reshape(4, 4), dt).reshape(-1))
    step = np.array(cols).T
    radius = np.max(np.abs(np.linalg.eigvals(step)))
    if radius > 1.0 + 1e-10:
        raise StepSizeError(f"RK4 step dt={dt:.3g} is unstable (spectral radius {radius:.6f})")
    return step


def _propagate(step: np.ndarray, v0: np.ndarray, n: int) -> np.ndarray:
    """Stack of ``step^k v0`` for ``k = 0 .. n``; shape ``(n + 1, ...)``."""
    out = np.empty((n + 1,) + v0.shape, dtype=complex)
    out[0] = v0
    block = min(_BLOCK, n)
    powers = [np.eye(step.shape[0], dtype=complex)]
    for _ in range(block):
        powers.append(step @ powers[-1])
    powers = np.array(powers[1:])  # step^1 .. step^block
    k, v = 0, v0
    while k < n:
        m = min(block, n - k)
        out[k + 1:k + 1 + m] = powers[:m] @ v if v.ndim == 2 else (powers[:m] @ v[:, None])[..., 0]
        v = out[k + m]
        k += m
    return out


def evolve(config: SystemConfig, rho0: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Density matrix after ``grid.steps`` RK4 steps from `rho0`."""
    step = rk4_map(config, grid.dt)
    total = np.linalg.matrix_power(step, grid.steps)
    rho = (total @ np.asarray(rho0, dtype=complex).reshape(-1)).reshape(4, 4)
    drift = abs(np.trace(rho) - np.trace(rho0))
    if drift > 1e-8:
        raise StepSizeError(f"trace drifted by {drift:.3g} over T={grid.total:.3g}")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -1e-8:
        raise StepSizeError("propagated state lost positivity; reduce dt")
    return rho


def fixed_point(config: SystemConfig, dt: float = 1e-3) -> np.ndarray:
    """Steady state as the unit-trace fixed point of the RK4 step map."""
    step = rk4_map(config, dt)
    a = step - np.eye(16)
    a[0, :] = np.eye(4).reshape(-1)
    b = np.zeros(16, dtype=complex)
    b[0] = 1.0
    rho = np.linalg.solve(a, b).reshape(4, 4)
    return 0.5 * (rho + rho.conj().T)


def _correlations(config: SystemConfig, grid: TimeGrid, stride: int = 1) -> np.ndarray:
    """All ``C_ij(tau_k)``, sampled every `stride` steps; shape ``(n, 2, 2)``."""
    rho = fixed_point(config)
    step = rk4_map(config, grid.dt)
    jump = np.linalg.matrix_power(step, stride)
    n = grid.steps // stride
    sources = np.stack([(rho @ _S_PLUS[i]).reshape(-1) for i in range(2)], axis=1)
    traj = _propagate(jump, sources, n)  # (n+1, 16, 2)
    mean_plus = np.array([np.trace(rho @ _S_PLUS[i]) for i in range(2)])
    c = np.empty((n + 1, 2, 2), dtype=complex)
    for j in range(2):
        # Tr(S_j^- X) with X row-major flattened
        w = _S_MINUS[j].T.reshape(-1)
        c[:, :, j] = np.einsum("k,nki->ni", w, traj) - mean_plus[None, :] * mean_plus.conj()[j]
    return c


def correlation(config: SystemConfig, i: int, j: int, grid: TimeGrid, stride: int = 1) -> np.ndarray:
    """Connected correlation ``<S_i^+(0) S_j^-(tau)>_s - <S_i^+><S_j^->``.

    Atoms are labelled 1 and 2.  Samples are ``tau = k * stride * dt``.
    """
    if i not in (1, 2) or j not in (1, 2):
        raise ValueError("atom labels are 1 and 2")
    return _correlations(config, grid, stride)[:, i - 1, j - 1]


def spectrum_fft(config: SystemConfig, grid: TimeGrid, fgrid: FrequencyGrid,
                 max_phase_step: float = 0.05) -> SpectrumTrace:
    """Trapezoidal half-line transform of the summed correlation onto `fgrid`.

    The RK4 trajectory is decimated so that ``delta * tau`` advances by at most
    `max_phase_step` between quadrature nodes.  Warns when the correlation has
    not decayed below 1e-4 of its initial value by the end of the window.
    """
    delta = fgrid.samples
    fastest = max(config.rabi, 2 * abs(omega12(config.z12)), config.gamma)
    omega_max = np.max(np.abs(delta)) + 2.0 * fastest
    stride = max(1, int(max_phase_step / (omega_max * grid.dt)))
    c = _correlations(config, grid, stride)
    z = np.array([config.z1, config.z2])
    phase = np.exp(1j * K * (z[:, None] - z[None, :]) * math.cos(config.theta))
    total = np.einsum("ij,nij->n", phase, c)
    c0 = abs(total[0])
    if c0 > 0 and abs(total[-1]) > 1e-4 * c0:
        warnings.warn(
            f"correlation tail {abs(total[-1]) / c0:.2e} of C(0) at T={grid.total:.3g}; "
            "extend the time window", RuntimeWarning)
    h = stride * grid.dt
    tau = np.arange(total.size) * h
    weights = np.full(total.size, h)
    weights[0] = weights[-1] = 0.5 * h
    f = total * weights
    if fgrid.points is None and not fgrid.windows and delta.size > 1:
        # sum_k f_k exp(i (d0 + m dd) k h) is a chirp-z transform along the
        # contour a * w**-m with a = exp(-i d0 h), w = exp(i dd h)
        dd = delta[1] - delta[0]
        out = signal.czt(f, m=delta.size, w=np.exp(1j * dd * h), a=np.exp(-1j * delta[0] * h)).real
    else:
        out = np.empty(delta.size)
        chunk = max(1, 2_000_000 // tau.size)
        for start in range(0, delta.size, chunk):
            d = delta[start:start + chunk]
            out[start:start + d.size] = (np.exp(1j * np.outer(d, tau)) @ f).real
    rho = fixed_point(config)
    mean_plus = np.array([np.trace(rho @ _S_PLUS[i]) for i in range(2)])
    elastic = phase * np.outer(mean_plus, mean_plus.conj())
    return SpectrumTrace(fgrid, out, elastic, config, engine="time-domain")
