"""Static pressure sweeps and their correlation with dynamically identified parameters."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .plate_model import (
    DomainError,
    MaterialProps,
    MembraneGeometry,
    PiezoModel,
    SensorDesign,
    StressState,
    bridge_voltage,
    static_deflection,
)
from .response_synth import DieTruth, die_rng, effective_geometry

BAR = 1e5
DEFAULT_PRESSURES = tuple(np.linspace(0.0, 0.5, 6) * BAR)
HARDWARE_MAX_PRESSURE = 7 * BAR


@dataclass(frozen=True)
class StaticSweep:
    pressures: np.ndarray
    deflections: np.ndarray
    voltages: np.ndarray

    def __post_init__(self):
        n = len(self.pressures)
        if len(self.deflections) != n or len(self.voltages) != n:
            raise ValueError("sweep arrays must have equal lengths")
        if n and self.pressures[0] != 0:
            raise ValueError("a sweep starts at zero pressure")

    def to_csv(self, path: str | Path, die_id: str | None = None, simulated: Sequence[float] | None = None):
        with open(path, "w", newline="") as fh:
            write_sweep_rows(csv.writer(fh), self, die_id, simulated, header=True)


def write_sweep_rows(writer, sweep: StaticSweep, die_id=None, simulated=None, header=False):
    cols = ["pressure_bar", "deflection_um", "voltage_mV"]
    if simulated is not None:
        cols.append("simulated_mV")
    if die_id is not None:
        cols.insert(0, "die_id")
    if header:
        writer.writerow(cols)
    for k, (p, w, v) in enumerate(zip(sweep.pressures, sweep.deflections, sweep.voltages)):
        row = [f"{p / BAR:.9g}", f"{w * 1e6:.9g}", f"{v * 1e3:.9g}"]
        if simulated is not None:
            row.append(f"{simulated[k] * 1e3:.9g}")
        if die_id is not None:
            row.insert(0, die_id)
        writer.writerow(row)


@dataclass(frozen=True)
class CorrelationReport:
    fitted_gain: float
    max_rel_voltage_error: float
    sensitivity: float  # V/Pa
    simulated: np.ndarray


def _unit_gain(piezo: PiezoModel) -> PiezoModel:
    return PiezoModel(1.0, piezo.supply_voltage, piezo.resistor_location)


def sweep(
    truth: DieTruth,
    piezo: PiezoModel,
    pressures: Sequence[float] = DEFAULT_PRESSURES,
    noise: float = 0.0,
    seed: int | Sequence[int] | None = None,
) -> StaticSweep:
    """Simulated prober measurement: centre deflection and bridge voltage per pressure.

    ``noise`` is the relative standard deviation of multiplicative Gaussian
    measurement noise on both channels.
    """
    p = np.asarray(pressures, dtype=float)
    if p.size == 0 or p[0] != 0 or np.any(np.diff(p) <= 0):
        raise ValueError("pressures must ascend from 0")
    if p[-1] > HARDWARE_MAX_PRESSURE:
        raise ValueError(f"pressure above the {HARDWARE_MAX_PRESSURE / BAR:g} bar hardware limit")
    geom = effective_geometry(truth)
    if geom is None:
        raise DomainError("no membrane: static sweep is undefined")
    centre = (geom.side_a / 2, geom.side_b / 2)
    # both quantities are linear in pressure
    w1 = static_deflection(geom, truth.material, truth.stress, 1.0, centre).value
    v1 = bridge_voltage(geom, truth.material, truth.stress, piezo, 1.0)
    w, v = w1 * p, v1 * p
    if noise > 0:
        # separate stream from the spectrum synthesis of the same die
        rng = die_rng([truth.rng_seed, 1] if seed is None else seed)
        w = w * (1 + noise * rng.standard_normal(p.size))
        v = v * (1 + noise * rng.standard_normal(p.size))
    return StaticSweep(p, w, v)


def simulated_voltages(
    pressures: Sequence[float],
    identified: tuple[float, float],
    design: SensorDesign,
    piezo: PiezoModel | None = None,
) -> np.ndarray:
    """Bridge voltages of the design at the identified (z, s), per unit gain."""
    z, s = identified
    geom: MembraneGeometry = design.geometry.with_thickness(z)
    mat: MaterialProps = design.material
    unit = _unit_gain(piezo or design.piezo)
    v1 = bridge_voltage(geom, mat, StressState(s), unit, 1.0)
    return v1 * np.asarray(pressures, dtype=float)


def adapt_gain(
    measured: StaticSweep,
    identified: tuple[float, float],
    design: SensorDesign,
) -> CorrelationReport:
    """Least-squares bridge gain that maps the simulated onto the measured voltages."""
    if len(measured.pressures) < 3:
        raise ValueError("gain adaptation needs at least 3 sweep points")
    v = np.asarray(measured.voltages, dtype=float)
    if not np.any(v != 0):
        raise ValueError("measured voltages are all zero")
    u = simulated_voltages(measured.pressures, identified, design)
    gain = float(u @ v / (u @ u))
    sim = gain * u
    nz = measured.pressures > 0
    rel = np.abs(sim[nz] - v[nz]) / np.abs(v[nz])
    unit_slope = u[nz][0] / measured.pressures[nz][0]
    return CorrelationReport(gain, float(rel.max()), gain * unit_slope, sim)
