"""Rotating-frame Hamiltonian, Liouvillian superoperator and steady state.

Basis ordering is ``|gg>, |ge>, |eg>, |ee>`` with the first label for atom 1.
Density matrices are vectorized by column stacking, so that
``vec(A X B) = kron(B.T, A) @ vec(X)``.

Dissipation uses the rates of the collective master equation without the
conventional factor 1/2, i.e. a single atom loses excited population at
``2 gamma`` and its dipole decays at ``gamma``.  Every linewidth in the
package follows from this choice.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .couplings import SystemConfig, gamma12, omega12, rabi_at
from .errors import DegenerateKernelError

DIM = 4
BASIS_LABELS = ("gg", "ge", "eg", "ee")
CONDITION_WARN = 1e12

_SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)  # |g><e| in (g, e)
_ID2 = np.eye(2, dtype=complex)

S1_MINUS = np.kron(_SIGMA_MINUS, _ID2)
S2_MINUS = np.kron(_ID2, _SIGMA_MINUS)
S1_PLUS = S1_MINUS.conj().T
S2_PLUS = S2_MINUS.conj().T
LOWERING = (S1_MINUS, S2_MINUS)
RAISING = (S1_PLUS, S2_PLUS)


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    n = int(round(np.sqrt(v.size)))
    return np.asarray(v).reshape(n, n, order="F")


def spre(a: np.ndarray) -> np.ndarray:
    """Superoperator of left multiplication, ``X -> a X``."""
    return np.kron(np.eye(a.shape[0]), a)


def spost(a: np.ndarray) -> np.ndarray:
    """Superoperator of right multiplication, ``X -> X a``."""
    return np.kron(a.T, np.eye(a.shape[0]))


def build_hamiltonian(config: SystemConfig, rabi: tuple | None = None) -> np.ndarray:
    """Time-independent Hamiltonian (over hbar) in the frame of the laser.

    `rabi` overrides the local Rabi frequencies ``(Omega_1, Omega_2)``
    otherwise taken from the drive profile at the atom positions.
    """
    w12 = config.gamma * omega12(config.z12)
    if rabi is None:
        r1, r2 = rabi_at(config.z1, config), rabi_at(config.z2, config)
    else:
        r1, r2 = (float(r) for r in rabi)
    h = -config.detuning * (S1_PLUS @ S1_MINUS + S2_PLUS @ S2_MINUS)
    h = h + w12 * (S1_PLUS @ S2_MINUS + S2_PLUS @ S1_MINUS)
    h = h + 0.5 * (r1 * (S1_PLUS + S1_MINUS) + r2 * (S2_PLUS + S2_MINUS))
    return h


def decay_matrix(config: SystemConfig) -> np.ndarray:
    """Symmetric 2x2 matrix of the rates ``gamma_ij``."""
    g12 = config.gamma * gamma12(config.z12)
    return np.array([[config.gamma, g12], [g12, config.gamma]])


@dataclass(frozen=True, eq=False)
class LiouvillianMatrix:
    matrix: np.ndarray
    config: SystemConfig

    def __post_init__(self):
        self.matrix.setflags(write=False)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho))


def build_liouvillian(config: SystemConfig, rabi: tuple | None = None) -> LiouvillianMatrix:
    """Assemble the 16x16 generator of the collective master equation.

    `rabi` is passed on to :func:`build_hamiltonian`.
    """
    h = build_hamiltonian(config, rabi)
    gam = decay_matrix(config)
    lv = -1j * (spre(h) - spost(h))
    for i in range(2):
        for j in range(2):
            if gam[i, j] == 0:
                continue
            pm = RAISING[i] @ LOWERING[j]
            sandwich = spre(LOWERING[j]) @ spost(RAISING[i])
            lv -= gam[i, j] * (spre(pm) - 2.0 * sandwich + spost(pm))
    return LiouvillianMatrix(lv, config)


def trace_row() -> np.ndarray:
    """Row vector ``t`` with ``t @ vec(rho) == Tr(rho)``."""
    return vec(np.eye(DIM)).astype(complex)


def steady_state(lv: LiouvillianMatrix) -> np.ndarray:
    """Unique density matrix annihilated by `lv`.

    The first row of the generator is replaced by the trace constraint and
    the resulting dense system is solved by LU with partial pivoting.

    Raises
    ------
    DegenerateKernelError
        If the constrained system is singular (kernel of dimension > 1).
    """
    a = np.array(lv.matrix)
    a[0, :] = trace_row()
    b = np.zeros(DIM * DIM, dtype=complex)
    b[0] = 1.0
    cond = np.linalg.cond(a)
    if not np.isfinite(cond):
        raise DegenerateKernelError(f"steady state not unique for {lv.config!r}")
    if cond > CONDITION_WARN:
        warnings.warn(f"steady-state system is ill-conditioned (cond={cond:.3g})", RuntimeWarning)
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - caught by cond above
        raise DegenerateKernelError(f"steady state not unique for {lv.config!r}") from exc
    rho = unvec(x)
    return 0.5 * (rho + rho.conj().T)


def kernel_dimension(lv: LiouvillianMatrix, tol: float = 1e-9) -> int:
    sv = np.linalg.svd(lv.matrix, compute_uv=False)
    return int(np.sum(sv < tol * max(sv[0], 1.0)))


def expectation(rho: np.ndarray, op: np.ndarray) -> complex:
    return complex(np.trace(rho @ op))


def _complex_rows(m: np.ndarray) -> list:
    return [[{"re": float(z.real), "im": float(z.imag)} for z in row] for row in m]


def dump_json(lv: LiouvillianMatrix, rho: np.ndarray | None = None, **kwargs) -> str:
    """Debug dump of the generator and steady state (row-major re/im pairs)."""
    if rho is None:
        rho = steady_state(lv)
    doc = {
        "basis": list(BASIS_LABELS),
        "vectorization": "column-stacking",
        "config": lv.config.to_dict(),
        "liouvillian": _complex_rows(lv.matrix),
        "steady_state": _complex_rows(rho),
    }
    return json.dumps(doc, **kwargs)


def load_json(text: str) -> tuple[np.ndarray, np.ndarray, SystemConfig]:
    doc = json.loads(text)

    def mat(rows):
        return np.array([[c["re"] + 1j * c["im"] for c in row] for row in rows])

    return mat(doc["liouvillian"]), mat(doc["steady_state"]), SystemConfig.from_dict(doc["config"])
