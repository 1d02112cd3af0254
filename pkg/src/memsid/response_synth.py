"""Synthetic vibrometer spectra for simulated dies.

Each in-band mode contributes a Lorentzian magnitude peak whose height at a
scan point is ``|phi(scan)| * |phi(electrode)|``. Peak positions carry
multiplicative Gaussian jitter (shared between exactly degenerate partners),
a Poisson number of narrow spurious peaks is added to every channel, and
uniform noise sits on top.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence``; both are specified algorithms, so a seed reproduces the
same spectrum on any platform.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .plate_model import (
    MaterialProps,
    MembraneGeometry,
    StressState,
    mode_amplitude_at_point,
    modes_below,
)


class DefectKind(str, enum.Enum):
    NONE = "none"
    NO_MEMBRANE = "no_membrane"
    ASYMMETRY = "asymmetry"


@dataclass(frozen=True)
class DefectSpec:
    kind: DefectKind = DefectKind.NONE
    ratio: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DefectKind(self.kind))
        if self.kind is DefectKind.ASYMMETRY and not self.ratio > 0:
            raise ValueError("asymmetry ratio must be > 0")

    @classmethod
    def asymmetry(cls, ratio: float) -> DefectSpec:
        return cls(DefectKind.ASYMMETRY, ratio)

    @classmethod
    def no_membrane(cls) -> DefectSpec:
        return cls(DefectKind.NO_MEMBRANE)

    @property
    def is_defect(self) -> bool:
        return self.kind is not DefectKind.NONE


@dataclass(frozen=True)
class DieTruth:
    geometry: MembraneGeometry
    stress: StressState
    defect: DefectSpec = DefectSpec()
    rng_seed: int = 0
    material: MaterialProps = field(default_factory=MaterialProps)


@dataclass(frozen=True)
class AcquisitionSpec:
    """Measurement settings.

    ``measurement_points`` and ``electrode_position`` are fractions of the
    membrane side lengths, so the same scan layout applies to every die.
    ``noise_floor`` is relative to a unit-weight modal peak.
    """

    f_min: float = 10e3
    f_max: float = 1e6
    bin_count: int = 4096
    quality_factor: float = 500.0
    noise_floor: float = 1e-3
    freq_jitter_sigma: float = 5e-4
    spurious_peak_rate: float = 2.0
    measurement_points: tuple[tuple[float, float], ...] = ((0.3, 0.35), (0.62, 0.22), (0.2, 0.7))
    electrode_position: tuple[float, float] = (0.3, 0.3)

    def __post_init__(self):
        if not self.f_min < self.f_max:
            raise ValueError("f_min must be < f_max")
        if self.bin_count < 2:
            raise ValueError("bin_count must be >= 2")
        if not self.quality_factor > 0:
            raise ValueError("quality factor must be > 0")
        if self.noise_floor < 0 or self.freq_jitter_sigma < 0 or self.spurious_peak_rate < 0:
            raise ValueError("noise settings must be >= 0")
        if not self.measurement_points:
            raise ValueError("at least one measurement point is required")
        points = tuple(tuple(float(c) for c in p) for p in self.measurement_points)
        for u, v in points + (tuple(self.electrode_position),):
            if not (0 <= u <= 1 and 0 <= v <= 1):
                raise ValueError("scan and electrode positions are fractions in [0, 1]")
        object.__setattr__(self, "measurement_points", points)
        object.__setattr__(self, "electrode_position", tuple(float(c) for c in self.electrode_position))

    @property
    def freqs(self) -> np.ndarray:
        return np.linspace(self.f_min, self.f_max, self.bin_count)

    @property
    def bin_width(self) -> float:
        return (self.f_max - self.f_min) / (self.bin_count - 1)

    def noiseless(self) -> AcquisitionSpec:
        return replace(self, noise_floor=0.0, freq_jitter_sigma=0.0, spurious_peak_rate=0.0)


@dataclass(frozen=True)
class FrequencyResponse:
    freqs: np.ndarray
    amplitude: np.ndarray  # shape (n_points, n_bins)

    def __post_init__(self):
        amp = np.atleast_2d(self.amplitude)
        if amp.shape[1] != self.freqs.size:
            raise ValueError("amplitude and frequency arrays differ in length")
        object.__setattr__(self, "amplitude", amp)

    def combined(self) -> np.ndarray:
        return self.amplitude.max(axis=0)

    def scaled(self, c: float) -> FrequencyResponse:
        return FrequencyResponse(self.freqs, self.amplitude * c)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["freq_hz"] + [f"amp_point{i + 1}" for i in range(self.amplitude.shape[0])])
            for j, f in enumerate(self.freqs):
                w.writerow([f"{f:.10g}"] + [f"{a:.9g}" for a in self.amplitude[:, j]])


def effective_geometry(truth: DieTruth) -> MembraneGeometry | None:
    """Geometry actually realised on the die; ``None`` when the membrane is missing."""
    defect = truth.defect
    if defect.kind is DefectKind.NO_MEMBRANE:
        return None
    if defect.kind is DefectKind.ASYMMETRY:
        g = truth.geometry
        return replace(g, side_a=g.side_a * (1 + defect.ratio), side_b=g.side_b / (1 + defect.ratio))
    return truth.geometry


def lorentzian(f, f0, width, amplitude=1.0):
    """Magnitude lineshape ``A / (1 + ((f - f0) / width)^2)``, width = HWHM."""
    return amplitude / (1.0 + ((f - f0) / width) ** 2)


def in_band_modes(truth: DieTruth, acq: AcquisitionSpec):
    geom = effective_geometry(truth)
    if geom is None:
        return []
    return [(mi, f) for mi, f in modes_below(geom, truth.material, truth.stress, acq.f_max) if f >= acq.f_min]


def die_rng(seed: int | Sequence[int]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def synthesize(truth: DieTruth, acq: AcquisitionSpec) -> FrequencyResponse:
    rng = die_rng(truth.rng_seed)
    freqs = acq.freqs
    n_pts = len(acq.measurement_points)
    amp = np.zeros((n_pts, freqs.size))
    geom = effective_geometry(truth)

    if geom is not None:
        modes = modes_below(geom, truth.material, truth.stress, acq.f_max * 1.05)
        # jitter is drawn once per physical peak so degenerate partners stay together
        distinct = sorted({f for _, f in modes})
        jitter = dict(zip(distinct, 1.0 + acq.freq_jitter_sigma * rng.standard_normal(len(distinct))))
        eu, ev = acq.electrode_position
        electrode = (eu * geom.side_a, ev * geom.side_b)
        scan = [(u * geom.side_a, v * geom.side_b) for u, v in acq.measurement_points]
        for mode, f in modes:
            f0 = f * jitter[f]
            hwhm = f0 / (2.0 * acq.quality_factor)
            drive = abs(mode_amplitude_at_point(mode, geom, electrode))
            weights = np.array([abs(mode_amplitude_at_point(mode, geom, p)) for p in scan]) * drive
            if not np.any(weights > 0):
                continue
            amp += weights[:, None] * lorentzian(freqs, f0, hwhm)[None, :]

        n_spur = rng.poisson(acq.spurious_peak_rate)
        spur_f = rng.uniform(acq.f_min, acq.f_max, n_spur)
        spur_a = rng.uniform(0.02, 0.2, n_spur)
        width = 0.25 * acq.bin_width
        for f0, a0 in zip(spur_f, spur_a):
            amp += lorentzian(freqs, f0, width, a0)[None, :]

    amp += acq.noise_floor * rng.uniform(0.0, 1.0, amp.shape)
    return FrequencyResponse(freqs, amp)
