import csv

import numpy as np
import pytest

from memsid.plate_model import DomainError, PiezoModel, StressState, bridge_voltage, static_deflection
from memsid.response_synth import DefectSpec, DieTruth
from memsid.static_correlate import (
    BAR,
    DEFAULT_PRESSURES,
    StaticSweep,
    adapt_gain,
    simulated_voltages,
    sweep,
)
from oracles import navier_deflection_loop


def truth(design, z=15e-6, defect=DefectSpec(), seed=4):
    return DieTruth(design.geometry.with_thickness(z), StressState(50e6), defect, rng_seed=seed)


def test_noiseless_sweep_is_linear(design):
    sw = sweep(truth(design), design.piezo)
    p = np.asarray(DEFAULT_PRESSURES)
    np.testing.assert_allclose(sw.deflections, sw.deflections[-1] * p / p[-1], rtol=1e-14)
    np.testing.assert_allclose(sw.voltages, sw.voltages[-1] * p / p[-1], rtol=1e-14)
    assert sw.deflections[0] == 0 and sw.voltages[0] == 0


def test_half_bar_centre_deflection_pin(design):
    sw = sweep(truth(design), design.piezo)
    D = 169e9 * 15e-6**3 / (12 * (1 - 0.22**2))
    ref = navier_deflection_loop(0.5 * BAR, 1300e-6, 1300e-6, D, 50e6 * 4e-6, 650e-6, 650e-6)
    assert sw.deflections[-1] > 0
    assert sw.deflections[-1] == pytest.approx(ref, rel=1e-12)
    assert sw.deflections[-1] * 1e6 == pytest.approx(8.6, rel=0.01)


def test_noise_is_seeded(design):
    a = sweep(truth(design), design.piezo, noise=0.01)
    b = sweep(truth(design), design.piezo, noise=0.01)
    c = sweep(truth(design, seed=5), design.piezo, noise=0.01)
    np.testing.assert_array_equal(a.voltages, b.voltages)
    assert not np.array_equal(a.voltages, c.voltages)


def test_self_consistent_gain(design):
    g0 = 3.3e-10
    sw = sweep(truth(design), PiezoModel(gain_G=g0))
    rep = adapt_gain(sw, (15e-6, 50e6), design)
    assert rep.fitted_gain == pytest.approx(g0, rel=1e-13)
    assert rep.max_rel_voltage_error < 1e-12
    slope = bridge_voltage(design.geometry, design.material, StressState(50e6), PiezoModel(gain_G=g0), 1.0)
    assert rep.sensitivity == pytest.approx(slope, rel=1e-12)


def test_gain_doubles_with_measurement(design):
    one = adapt_gain(sweep(truth(design), PiezoModel(gain_G=5e-10)), (15e-6, 50e6), design)
    two = adapt_gain(sweep(truth(design), PiezoModel(gain_G=10e-10)), (15e-6, 50e6), design)
    assert two.fitted_gain == pytest.approx(2 * one.fitted_gain, rel=1e-13)


def test_two_percent_thickness_error_with_noise(design):
    worst = 0.0
    for seed in range(30):
        sw = sweep(truth(design, seed=seed), design.piezo, noise=0.01)
        worst = max(worst, adapt_gain(sw, (15e-6 * 1.02, 50e6), design).max_rel_voltage_error)
    assert worst < 0.10


def test_error_paths(design):
    with pytest.raises(DomainError):
        sweep(truth(design, defect=DefectSpec.no_membrane()), design.piezo)
    with pytest.raises(ValueError):
        sweep(truth(design), design.piezo, pressures=[0.1 * BAR, 0.2 * BAR])
    with pytest.raises(ValueError):
        sweep(truth(design), design.piezo, pressures=[0, 8 * BAR])
    flat = StaticSweep(np.array([0, 1e4, 2e4]), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        adapt_gain(flat, (15e-6, 50e6), design)
    short = StaticSweep(np.array([0, 1e4]), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        adapt_gain(short, (15e-6, 50e6), design)


def test_simulated_voltages_are_per_unit_gain(design):
    v = simulated_voltages([0.0, 1e4], (15e-6, 50e6), design)
    g = design.geometry
    ref = bridge_voltage(g, design.material, StressState(50e6), PiezoModel(gain_G=1.0), 1e4)
    assert v[1] == pytest.approx(ref, rel=1e-14)
    assert static_deflection(g, design.material, StressState(50e6), 0.0, (1e-4, 1e-4)).value == 0


def test_sweep_csv(design, tmp_path):
    sw = sweep(truth(design), design.piezo)
    path = tmp_path / "s.csv"
    sw.to_csv(path, die_id="R1C1", simulated=sw.voltages)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["die_id", "pressure_bar", "deflection_um", "voltage_mV", "simulated_mV"]
    assert len(rows) == 7 and float(rows[-1][1]) == pytest.approx(0.5)
