import math

import numpy as np
import pytest
from scipy.optimize import brentq

from dipole_ruler.analysis import find_peaks
from dipole_ruler.couplings import SystemConfig, omega12, rabi_at
from dipole_ruler.errors import DomainError
from dipole_ruler.spectrum import (
    CSV_HEADER,
    FrequencyGrid,
    MotionModel,
    SpectrumTrace,
    compute_spectrum,
    default_grid,
    motion_averaged_spectrum,
    read_csv,
    spectrum_point,
)

WIDE = SystemConfig(0.05, 0.3, 100.0)
MID = SystemConfig(0.05, 0.08, 200.0)
CLOSE = SystemConfig(0.05, 0.03, 20.0)


def fine_grid(span, step=0.02):
    return FrequencyGrid(-span, span, int(round(2 * span / step)) + 1)


def sidebands(trace, central=3.0):
    return [p.position for p in find_peaks(trace) if abs(p.position) > central]


def test_undriven_pair_emits_nothing():
    tr = compute_spectrum(SystemConfig(0.05, 0.08, 0.0), FrequencyGrid(-50, 50, 101))
    assert np.all(tr.values == 0)
    assert spectrum_point(SystemConfig(0.05, 0.08, 0.0), 3.0) == 0


def test_point_matches_trace():
    grid = FrequencyGrid(-150, 150, 31)
    tr = compute_spectrum(MID, grid)
    for d, v in zip(grid.samples[::7], tr.values[::7]):
        assert spectrum_point(MID, d) == pytest.approx(v, rel=1e-10)


def test_single_atom_mollow_sidebands_at_rabi_frequency():
    # atom 2 sits on a node ten wavelengths away
    cfg = SystemConfig(0.25, 10.25, 20.0)
    tr = compute_spectrum(cfg, fine_grid(40.0))
    side = sidebands(tr)
    assert len(side) == 2
    # damping pulls the maxima slightly inwards; a wrong rate convention
    # would put them at 10 or 40
    assert side == pytest.approx([-20.0, 20.0], abs=0.2)


def test_large_separation_sidebands():
    tr = compute_spectrum(WIDE, fine_grid(120.0))
    side = sorted(abs(p) for p in sidebands(tr))
    assert side == pytest.approx([30.90, 30.90, 80.90, 80.90], abs=0.5)


def test_small_separation_dominant_sideband():
    tr = compute_spectrum(CLOSE, FrequencyGrid(100, 400, 3001))
    peak = max(find_peaks(tr), key=lambda p: p.height)
    assert peak.position == pytest.approx(220.0, abs=3.0)


def test_intermediate_has_central_peak_and_two_doublets():
    tr = compute_spectrum(MID, FrequencyGrid(-400, 400, 4001))
    pos = [p.position for p in find_peaks(tr)]
    assert any(abs(p) < 1.0 for p in pos)
    assert len([p for p in pos if p > 1.0]) == 4
    assert len([p for p in pos if p < -1.0]) == 4


def test_positivity():
    for cfg in (WIDE, MID, CLOSE, SystemConfig(0.05, 0.08, 20.0)):
        tr = compute_spectrum(cfg, default_grid(cfg))
        assert tr.values.min() >= -1e-8 * tr.values.max()


def test_even_trace_when_coherent_coupling_vanishes():
    z0 = brentq(omega12, 0.5, 1.0)
    cfg = SystemConfig(0.05, z0, 30.0)
    tr = compute_spectrum(cfg, FrequencyGrid.symmetric(60.0, 1201))
    v = tr.values
    assert np.max(np.abs(v - v[::-1])) <= 1e-6 * np.max(v)


def test_coherent_coupling_breaks_evenness():
    # the exchange shift moves the two wings in opposite directions
    tr = compute_spectrum(SystemConfig(0.05, 0.08, 20.0), FrequencyGrid.symmetric(60.0, 1201))
    v = tr.values
    assert np.max(np.abs(v - v[::-1])) > 1e-3 * np.max(v)


def test_sideband_position_law_for_weak_coupling():
    rng = np.random.default_rng(11)
    tested = 0
    while tested < 12:
        cfg = SystemConfig(rng.uniform(0, 0.25), rng.uniform(0.18, 0.5), rng.uniform(50, 200))
        rabis = sorted(abs(rabi_at(z, cfg)) for z in (cfg.z1, cfg.z2))
        if rabis[0] < 10 or rabis[1] - rabis[0] < 10:
            continue
        tested += 1
        side = sidebands(compute_spectrum(cfg, fine_grid(1.3 * cfg.rabi)))
        assert len(side) == 4
        for p in side:
            assert min(abs(abs(p) - r) for r in rabis) <= 0.5


def test_sideband_offset_bounded_by_exchange_shift():
    # below about 0.17 wavelengths the sidebands split by the exchange shift
    for cfg in (SystemConfig(0.054, 0.113, 80.0), SystemConfig(0.089, 0.124, 181.0)):
        rabis = [abs(rabi_at(z, cfg)) for z in (cfg.z1, cfg.z2)]
        side = sidebands(compute_spectrum(cfg, fine_grid(1.3 * cfg.rabi)))
        worst = max(min(abs(abs(p) - r) for r in rabis) for p in side)
        assert 0.5 < worst <= abs(omega12(cfg.z12)) + 0.5


def test_two_point_grid():
    grid = FrequencyGrid(-10.0, 10.0, 2)
    tr = compute_spectrum(WIDE, grid)
    assert tr.values.shape == (2,)
    assert list(tr.delta) == [-10.0, 10.0]


def test_elastic_weight_recorded():
    tr = compute_spectrum(WIDE, FrequencyGrid(-5, 5, 3))
    ew = tr.elastic_weight
    assert ew.shape == (2, 2)
    assert np.allclose(ew, ew.conj().T)
    assert np.trace(ew).real > 0


def test_csv_roundtrip():
    tr = compute_spectrum(MID, FrequencyGrid(-300, 300, 61))
    text = tr.to_csv()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    back = read_csv(text)
    assert np.array_equal(back.values, tr.values)
    assert np.array_equal(back.delta, tr.delta)


def test_csv_rejects_bad_header():
    with pytest.raises(DomainError):
        read_csv("x,y\n1,2\n")


def test_json_roundtrip_is_exact():
    cfg = SystemConfig(0.05, 0.08, 200.0 / 3, phase=0.1, theta=1.1)
    tr = compute_spectrum(cfg, FrequencyGrid(-300, 300, 61))
    back = SpectrumTrace.from_json(tr.to_json())
    assert back.config == cfg
    assert np.array_equal(back.values, tr.values)
    assert np.array_equal(back.elastic_weight, tr.elastic_weight)
    assert back.grid == tr.grid


def test_normalized_peak_is_one():
    tr = compute_spectrum(WIDE, FrequencyGrid(-120, 120, 241)).normalized()
    assert tr.values.max() == pytest.approx(1.0)


def test_grid_validation_and_parsing():
    assert FrequencyGrid.parse("-5:5:11").samples[5] == pytest.approx(0.0)
    with pytest.raises((DomainError, ValueError)):
        FrequencyGrid(5, -5, 11)
    with pytest.raises((DomainError, ValueError)):
        FrequencyGrid.parse("1:2")


def test_refined_window():
    g = FrequencyGrid(-100, 100, 201).refined(30.0, 5.0)
    x = g.samples
    inside = x[(x >= 25.0) & (x <= 35.0)]
    assert np.diff(inside).max() == pytest.approx(0.1)
    assert np.diff(x[x < 20.0]).min() == pytest.approx(1.0)
    assert x[0] == -100.0 and x[-1] == 100.0


def test_motion_without_amplitude_is_plain_spectrum():
    grid = FrequencyGrid(-120, 120, 121)
    a = motion_averaged_spectrum(WIDE, MotionModel(0.0), grid)
    b = compute_spectrum(WIDE, grid)
    assert np.array_equal(a.values, b.values)


def test_motion_validation():
    with pytest.raises(DomainError):
        motion_averaged_spectrum(SystemConfig(0.05, 0.004, 1.0), MotionModel(0.005))
    with pytest.raises(DomainError):
        MotionModel(-0.001)
    with pytest.raises(DomainError):
        MotionModel(0.001, distribution="uniform")
    with pytest.raises(DomainError):
        MotionModel(0.001, drive="sometimes")


def test_motion_quadrature_weights():
    for dist in ("turning_point_arcsine", "gaussian"):
        zs, ws = MotionModel(0.005, dist, 32).nodes(0.03)
        assert ws.sum() == pytest.approx(1.0)
        assert np.dot(ws, zs) == pytest.approx(0.03, abs=1e-12)
    zs, ws = MotionModel(0.005, "gaussian", 40).nodes(0.03)
    # rms of amplitude / sqrt(2)
    assert math.sqrt(np.dot(ws, (zs - 0.03) ** 2)) == pytest.approx(0.005 / math.sqrt(2))


def test_motion_negligible_for_large_separation():
    grid = fine_grid(120.0, 0.1)
    plain = compute_spectrum(WIDE, grid)
    avg = motion_averaged_spectrum(WIDE, MotionModel(0.005, node_count=16), grid)
    for p in find_peaks(plain):
        k = int(np.argmin(np.abs(grid.samples - p.position)))
        assert abs(avg.values[k] / plain.values[k] - 1) < 0.05


def test_motion_through_standing_wave_smears_drive_sideband():
    # atom 2 sweeps Omega_2 over about 3 gamma, which flattens its sideband
    grid = fine_grid(120.0, 0.1)
    plain = compute_spectrum(WIDE, grid)
    avg = motion_averaged_spectrum(WIDE, MotionModel(0.005, node_count=16, drive="follow"), grid)
    k = int(np.argmin(np.abs(grid.samples - 80.85)))
    j = int(np.argmin(np.abs(grid.samples - 30.82)))
    assert avg.values[k] < 0.8 * plain.values[k]
    assert avg.values[j] == pytest.approx(plain.values[j], rel=1e-3)
