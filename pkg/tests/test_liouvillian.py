import math

import numpy as np
import pytest

from dipole_ruler.couplings import SystemConfig, omega12
from dipole_ruler.liouvillian import (
    BASIS_LABELS,
    LOWERING,
    RAISING,
    build_hamiltonian,
    build_liouvillian,
    dump_json,
    expectation,
    kernel_dimension,
    load_json,
    spost,
    spre,
    steady_state,
    unvec,
    vec,
)

FIGURE_CONFIGS = [
    SystemConfig(0.05, 0.3, 100.0),
    SystemConfig(0.05, 0.08, 200.0),
    SystemConfig(0.05, 0.03, 20.0),
    SystemConfig(0.05, 0.08, 5.0),
]


def random_density(rng, dim=4):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def random_hermitian(rng, dim=4):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return a + a.conj().T


def test_vectorization_is_column_stacking():
    rng = np.random.default_rng(0)
    a, x, b = (rng.standard_normal((4, 4)) for _ in range(3))
    assert np.allclose(vec(x), x.reshape(-1, order="F"))
    assert np.allclose(unvec(vec(x)), x)
    assert np.allclose(spre(a) @ spost(b) @ vec(x), vec(a @ x @ b))
    assert BASIS_LABELS == ("gg", "ge", "eg", "ee")


def test_hamiltonian_without_drive_is_exchange_only():
    cfg = SystemConfig(0.05, 0.08, 0.0)
    h = build_hamiltonian(cfg)
    w12 = omega12(0.08)
    expected = np.zeros((4, 4), complex)
    expected[1, 2] = expected[2, 1] = w12
    assert np.allclose(h, expected, atol=1e-14)
    assert np.allclose(np.sort(np.linalg.eigvalsh(h)), [-w12, 0, 0, w12])


def test_hamiltonian_drive_entries():
    h = build_hamiltonian(SystemConfig(0.05, 0.08, 200.0))
    # |gg> couples to |ge> via atom 2 and to |eg> via atom 1
    assert h[0, 1].real == pytest.approx(72.90, abs=0.005)
    assert h[0, 2].real == pytest.approx(30.90, abs=0.005)
    assert np.allclose(h, h.conj().T)


def test_trace_and_hermiticity_preserved():
    rng = np.random.default_rng(1)
    for _ in range(100):
        cfg = SystemConfig(rng.uniform(0, 0.5), rng.uniform(1e-3, 0.5), rng.uniform(0, 300),
                           phase=rng.uniform(-1, 1), detuning=rng.uniform(-5, 5),
                           theta=rng.uniform(0, math.pi))
        lv = build_liouvillian(cfg)
        rho = random_hermitian(rng)
        out = lv.apply(rho)
        scale = np.abs(lv.matrix).max()
        assert abs(np.trace(out)) <= 1e-12 * scale
        assert np.abs(out - out.conj().T).max() <= 1e-12 * scale


def test_steady_state_axioms():
    rng = np.random.default_rng(2)
    for _ in range(100):
        cfg = SystemConfig(rng.uniform(0, 0.5), rng.uniform(1e-3, 0.5), rng.uniform(0, 300),
                           phase=rng.uniform(-1, 1))
        lv = build_liouvillian(cfg)
        rho = steady_state(lv)
        assert np.abs(lv.matrix @ vec(rho)).max() <= 1e-10 * max(1.0, np.abs(lv.matrix).max())
        assert abs(np.trace(rho) - 1) <= 1e-12
        assert np.abs(rho - rho.conj().T).max() <= 1e-12
        assert np.linalg.eigvalsh(rho).min() >= -1e-10


def test_undriven_steady_state_is_ground():
    rho = steady_state(build_liouvillian(SystemConfig(0.05, 0.08, 0.0)))
    expected = np.zeros((4, 4))
    expected[0, 0] = 1
    assert np.allclose(rho, expected, atol=1e-12)


def test_single_atom_excited_population():
    # atom 2 on a node, far away: an isolated driven atom with Rabi frequency 2
    cfg = SystemConfig(0.25, 10.25, 2.0)
    rho = steady_state(build_liouvillian(cfg))
    p_e1 = expectation(rho, RAISING[0] @ LOWERING[0]).real
    assert p_e1 == pytest.approx(1 / 3, abs=1e-3)
    # only the weak far-field coupling reaches the atom on the node
    assert expectation(rho, RAISING[1] @ LOWERING[1]).real < 1e-3


def test_population_decay_rate():
    ev = np.linalg.eigvals(build_liouvillian(SystemConfig(0.05, 50.0, 0.0)).matrix)
    assert np.min(np.abs(ev + 2.0)) < 1e-3


@pytest.mark.parametrize("cfg", FIGURE_CONFIGS)
def test_unique_steady_state(cfg):
    lv = build_liouvillian(cfg)
    assert kernel_dimension(lv) == 1
    ev = np.linalg.eigvals(lv.matrix)
    assert np.max(ev.real) == pytest.approx(0.0, abs=1e-9)


def test_json_roundtrip():
    lv = build_liouvillian(SystemConfig(0.05, 0.08, 200.0, phase=0.1))
    m, rho, cfg = load_json(dump_json(lv))
    assert np.array_equal(m, lv.matrix)
    assert np.allclose(rho, steady_state(lv))
    assert cfg == lv.config


def test_generator_is_read_only():
    lv = build_liouvillian(SystemConfig(0.05, 0.08, 1.0))
    with pytest.raises(ValueError):
        lv.matrix[0, 0] = 1.0
