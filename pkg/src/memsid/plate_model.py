"""Analytic forward model of a prestressed, simply supported rectangular membrane.

The membrane is a silicon plate of thickness ``z`` carrying a thin passivation
film. The film contributes an in-plane tension ``N = s * t_pass`` and an areal
mass ``rho_pass * t_pass``; its bending stiffness is neglected.

    f_mn = 1/(2 pi) * sqrt((D k^2 + N k) / rho_A)
    k    = (m pi / a)^2 + (n pi / b)^2
    D    = E z^3 / (12 (1 - nu^2))

Static quantities use the Navier double-sine series (odd terms only).
All values are SI.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_SERIES_ORDER = 99


class DomainError(ValueError):
    """Invalid geometry, material or evaluation point."""


class BucklingError(DomainError):
    """Compressive prestress beyond the first buckling load."""

    def __init__(self, message: str, thickness: float | None = None, stress: float | None = None):
        super().__init__(message)
        self.thickness = thickness
        self.stress = stress


@dataclass(frozen=True)
class MaterialProps:
    youngs_modulus: float = 169e9
    poisson_ratio: float = 0.22
    density: float = 2330.0

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise DomainError(f"youngs_modulus must be > 0, got {self.youngs_modulus}")
        if not 0 <= self.poisson_ratio < 0.5:
            raise DomainError(f"poisson_ratio must be in [0, 0.5), got {self.poisson_ratio}")
        if not self.density > 0:
            raise DomainError(f"density must be > 0, got {self.density}")


@dataclass(frozen=True)
class MembraneGeometry:
    side_a: float = 1300e-6
    side_b: float = 1300e-6
    thickness_z: float = 15e-6
    passivation_thickness: float = 4e-6
    passivation_density: float = 2200.0

    def __post_init__(self):
        for name in ("side_a", "side_b", "thickness_z"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be a positive length, got {value}")
        if not (self.passivation_thickness >= 0 and math.isfinite(self.passivation_thickness)):
            raise DomainError("passivation_thickness must be >= 0")
        if self.passivation_density < 0:
            raise DomainError("passivation_density must be >= 0")

    def with_thickness(self, z: float) -> MembraneGeometry:
        return replace(self, thickness_z=z)

    @property
    def areal_mass_passivation(self) -> float:
        return self.passivation_density * self.passivation_thickness


@dataclass(frozen=True)
class StressState:
    """Passivation film stress in Pa, tensile positive."""

    passivation_stress_s: float = 0.0


@dataclass(frozen=True, order=True)
class ModeIndex:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise DomainError(f"mode indices must be >= 1, got ({self.m}, {self.n})")

    def __str__(self):
        return f"({self.m},{self.n})"


@dataclass(frozen=True)
class PiezoModel:
    """Lumped piezoresistive bridge.

    ``gain_G`` multiplies the supply voltage and the surface stress
    difference at ``resistor_location`` (1/Pa). The default is pi_44 / 2 of
    p-type silicon, i.e. a full bridge of longitudinal/transverse resistors.
    """

    gain_G: float = 6.9e-10
    supply_voltage: float = 5.0
    resistor_location: tuple[float, float] = (130e-6, 650e-6)

    def __post_init__(self):
        if not self.supply_voltage > 0:
            raise DomainError("supply_voltage must be > 0")
        object.__setattr__(self, "resistor_location", tuple(float(v) for v in self.resistor_location))


@dataclass(frozen=True)
class SensorDesign:
    name: str = "relative-1300"
    geometry: MembraneGeometry = field(default_factory=MembraneGeometry)
    material: MaterialProps = field(default_factory=MaterialProps)
    piezo: PiezoModel = field(default_factory=PiezoModel)

    def to_dict(self) -> dict:
        """External (JSON) representation in um / kg m^-3 / GPa units."""
        g, m, p = self.geometry, self.material, self.piezo
        return {
            "name": self.name,
            "side_a_um": g.side_a * 1e6,
            "side_b_um": g.side_b * 1e6,
            "thickness_um": g.thickness_z * 1e6,
            "passivation_thickness_um": g.passivation_thickness * 1e6,
            "passivation_density": g.passivation_density,
            "youngs_modulus_GPa": m.youngs_modulus / 1e9,
            "poisson_ratio": m.poisson_ratio,
            "density": m.density,
            "piezo_gain": p.gain_G,
            "supply_voltage": p.supply_voltage,
            "resistor_location_um": [v * 1e6 for v in p.resistor_location],
        }

    @classmethod
    def from_dict(cls, data: dict) -> SensorDesign:
        known = set(asdict_defaults())
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown design keys: {sorted(unknown)}")
        d = {**asdict_defaults(), **data}
        geometry = MembraneGeometry(
            side_a=float(d["side_a_um"]) * 1e-6,
            side_b=float(d["side_b_um"]) * 1e-6,
            thickness_z=float(d["thickness_um"]) * 1e-6,
            passivation_thickness=float(d["passivation_thickness_um"]) * 1e-6,
            passivation_density=float(d["passivation_density"]),
        )
        material = MaterialProps(
            youngs_modulus=float(d["youngs_modulus_GPa"]) * 1e9,
            poisson_ratio=float(d["poisson_ratio"]),
            density=float(d["density"]),
        )
        loc = d["resistor_location_um"]
        if len(loc) != 2:
            raise DomainError("resistor_location_um must be [x, y]")
        piezo = PiezoModel(
            gain_G=float(d["piezo_gain"]),
            supply_voltage=float(d["supply_voltage"]),
            resistor_location=(float(loc[0]) * 1e-6, float(loc[1]) * 1e-6),
        )
        _check_inside(geometry, piezo.resistor_location, strict=True)
        return cls(name=str(d["name"]), geometry=geometry, material=material, piezo=piezo)


def asdict_defaults() -> dict:
    return SensorDesign.to_dict(SensorDesign())


def load_design(path: str | Path) -> SensorDesign:
    with open(path) as fh:
        return SensorDesign.from_dict(json.load(fh))


def flexural_rigidity(geom: MembraneGeometry, mat: MaterialProps) -> float:
    return mat.youngs_modulus * geom.thickness_z**3 / (12.0 * (1.0 - mat.poisson_ratio**2))


def areal_density(geom: MembraneGeometry, mat: MaterialProps) -> float:
    return mat.density * geom.thickness_z + geom.areal_mass_passivation


def tension(geom: MembraneGeometry, stress: StressState) -> float:
    return stress.passivation_stress_s * geom.passivation_thickness


def wavenumber_sq(m, n, a: float, b: float):
    return (m * np.pi / a) ** 2 + (n * np.pi / b) ** 2


def _check_buckling(geom, mat, stress):
    D = flexural_rigidity(geom, mat)
    N = tension(geom, stress)
    k11 = wavenumber_sq(1, 1, geom.side_a, geom.side_b)
    if D * k11**2 + N * k11 <= 0:
        raise BucklingError(
            f"prestress {stress.passivation_stress_s:.4g} Pa buckles the membrane "
            f"(z={geom.thickness_z:.4g} m, critical tension {-D * k11:.4g} N/m)",
            thickness=geom.thickness_z,
            stress=stress.passivation_stress_s,
        )
    return D, N


def modal_frequencies(
    geom: MembraneGeometry, mat: MaterialProps, stress: StressState, k: int
) -> list[tuple[ModeIndex, float]]:
    """First ``k`` modes sorted by frequency; ties broken by (m, n)."""
    if k < 1:
        raise DomainError("k must be >= 1")
    D, N = _check_buckling(geom, mat, stress)
    rho_a = areal_density(geom, mat)
    # the first k modes by wavenumber always have m, n <= k
    idx = np.arange(1, k + 1)
    mm, nn = np.meshgrid(idx, idx, indexing="ij")
    kappa = wavenumber_sq(mm, nn, geom.side_a, geom.side_b)
    omega_sq = (D * kappa**2 + N * kappa) / rho_a
    freqs = np.sqrt(omega_sq) / (2.0 * np.pi)
    order = np.lexsort((nn.ravel(), mm.ravel(), freqs.ravel()))[:k]
    return [
        (ModeIndex(int(mm.ravel()[i]), int(nn.ravel()[i])), float(freqs.ravel()[i]))
        for i in order
    ]


def modes_below(
    geom: MembraneGeometry, mat: MaterialProps, stress: StressState, f_max: float
) -> list[tuple[ModeIndex, float]]:
    """All modes with frequency <= f_max, ascending."""
    D, N = _check_buckling(geom, mat, stress)
    rho_a = areal_density(geom, mat)
    omega_max_sq = (2 * np.pi * f_max) ** 2 * rho_a
    # frequency is increasing in kappa once the plate is stable
    kappa_max = (-N + math.sqrt(N * N + 4 * D * omega_max_sq)) / (2 * D)
    m_max = max(1, int(math.sqrt(kappa_max) * geom.side_a / math.pi) + 1)
    n_max = max(1, int(math.sqrt(kappa_max) * geom.side_b / math.pi) + 1)
    out = []
    for m in range(1, m_max + 1):
        for n in range(1, n_max + 1):
            kappa = wavenumber_sq(m, n, geom.side_a, geom.side_b)
            f = math.sqrt((D * kappa**2 + N * kappa) / rho_a) / (2 * math.pi)
            if f <= f_max:
                out.append((ModeIndex(m, n), f))
    out.sort(key=lambda item: (item[1], item[0].m, item[0].n))
    return out


def mode_amplitude_at_point(mode: ModeIndex, geom: MembraneGeometry, point: Sequence[float]) -> float:
    x, y = point
    _check_inside(geom, point)
    return math.sin(mode.m * math.pi * x / geom.side_a) * math.sin(mode.n * math.pi * y / geom.side_b)


def _check_inside(geom, point, strict=False):
    x, y = point
    if strict:
        ok = 0 < x < geom.side_a and 0 < y < geom.side_b
    else:
        ok = 0 <= x <= geom.side_a and 0 <= y <= geom.side_b
    if not ok:
        raise DomainError(f"point ({x:.4g}, {y:.4g}) lies outside the membrane")


class SeriesResult(NamedTuple):
    value: float
    order: int


def _navier_terms(geom, mat, stress, point, order):
    if order < 1:
        raise DomainError("series order must be >= 1")
    _check_inside(geom, point)
    D, N = _check_buckling(geom, mat, stress)
    odd = np.arange(1, order + 1, 2, dtype=float)
    m, n = np.meshgrid(odd, odd, indexing="ij")
    kappa = wavenumber_sq(m, n, geom.side_a, geom.side_b)
    # deflection amplitude per unit pressure
    amp = 16.0 / (np.pi**2 * m * n * (D * kappa**2 + N * kappa))
    x, y = point
    shape = np.sin(m * np.pi * x / geom.side_a) * np.sin(n * np.pi * y / geom.side_b)
    return D, m, n, amp * shape


def static_deflection(
    geom: MembraneGeometry,
    mat: MaterialProps,
    stress: StressState,
    pressure: float,
    point: Sequence[float],
    order: int = DEFAULT_SERIES_ORDER,
) -> SeriesResult:
    """Out-of-plane deflection (m) under uniform pressure, Navier series over odd m, n <= order."""
    if pressure < 0:
        raise DomainError("pressure must be >= 0")
    _, _, _, terms = _navier_terms(geom, mat, stress, point, order)
    return SeriesResult(float(pressure * terms.sum()), order)


def surface_stress_difference(
    geom: MembraneGeometry,
    mat: MaterialProps,
    stress: StressState,
    pressure: float,
    point: Sequence[float],
    order: int = DEFAULT_SERIES_ORDER,
) -> SeriesResult:
    """Bending stress difference sigma_x - sigma_y (Pa) at the top surface.

    sigma = 6 M / z^2 with M_x = -D (w_xx + nu w_yy), M_y = -D (w_yy + nu w_xx),
    so sigma_x - sigma_y = -6 D (1 - nu) (w_xx - w_yy) / z^2.
    """
    if pressure < 0:
        raise DomainError("pressure must be >= 0")
    D, m, n, terms = _navier_terms(geom, mat, stress, point, order)
    kx = (m * np.pi / geom.side_a) ** 2
    ky = (n * np.pi / geom.side_b) ** 2
    # w_xx - w_yy summed termwise
    curv_diff = float(((ky - kx) * terms).sum())
    z = geom.thickness_z
    value = -6.0 * D * (1.0 - mat.poisson_ratio) * curv_diff / z**2
    return SeriesResult(pressure * value, order)


def bridge_voltage(
    geom: MembraneGeometry,
    mat: MaterialProps,
    stress: StressState,
    piezo: PiezoModel,
    pressure: float,
    order: int = DEFAULT_SERIES_ORDER,
) -> float:
    _check_inside(geom, piezo.resistor_location, strict=True)
    sigma = surface_stress_difference(geom, mat, stress, pressure, piezo.resistor_location, order)
    return piezo.gain_G * piezo.supply_voltage * sigma.value


@dataclass(frozen=True)
class ParameterMatrix:
    """Forward-model grid ``frequencies[z][s][mode]`` (Hz)."""

    z_grid: np.ndarray
    s_grid: np.ndarray
    frequencies: np.ndarray
    modes: tuple[ModeIndex, ...]
    design: SensorDesign | None = None

    @property
    def mode_count(self) -> int:
        return self.frequencies.shape[2]

    @property
    def varying(self) -> tuple[str, ...]:
        """Parameters with more than one grid value, in (z, s) order."""
        names = []
        if len(self.z_grid) > 1:
            names.append("z")
        if len(self.s_grid) > 1:
            names.append("s")
        return tuple(names)

    def degenerate_groups(self, rtol: float = 1e-12) -> list[tuple[int, ...]]:
        """Runs of adjacent mode positions whose frequencies coincide at every grid node."""
        f = self.frequencies
        groups, current = [], [0]
        for j in range(1, self.mode_count):
            same = np.all(np.abs(f[..., j] - f[..., j - 1]) <= rtol * np.abs(f[..., j]))
            if same:
                current.append(j)
            else:
                if len(current) > 1:
                    groups.append(tuple(current))
                current = [j]
        if len(current) > 1:
            groups.append(tuple(current))
        return groups


def build_parameter_matrix(
    design: SensorDesign,
    z_grid: Sequence[float],
    s_grid: Sequence[float],
    mode_count: int,
) -> ParameterMatrix:
    """Sample the forward model on a (thickness, stress) grid.

    An axis with a single value is held fixed; every other axis needs at least
    three ascending points.
    """
    z_grid = np.asarray(z_grid, dtype=float)
    s_grid = np.asarray(s_grid, dtype=float)
    varying = 0
    for name, grid in (("z_grid", z_grid), ("s_grid", s_grid)):
        if grid.ndim != 1 or grid.size == 0:
            raise DomainError(f"{name} must be a non-empty 1-D sequence")
        if grid.size > 1:
            varying += 1
            if grid.size < 3:
                raise DomainError(f"{name} needs at least 3 points")
            if np.any(np.diff(grid) <= 0):
                raise DomainError(f"{name} must be strictly ascending")
    if varying == 0:
        raise DomainError("at least one parameter must vary")
    if mode_count < varying + 1:
        raise DomainError(f"mode_count must be >= {varying + 1} for {varying} parameter(s)")

    freqs = np.empty((z_grid.size, s_grid.size, mode_count))
    modes = None
    for i, z in enumerate(z_grid):
        geom = design.geometry.with_thickness(float(z))
        for j, s in enumerate(s_grid):
            result = modal_frequencies(geom, design.material, StressState(float(s)), mode_count)
            these = tuple(mi for mi, _ in result)
            if modes is None:
                modes = these
            elif these != modes:
                raise DomainError(f"mode ordering changes across the grid at z={z:.4g}, s={s:.4g}")
            freqs[i, j] = [f for _, f in result]
    return ParameterMatrix(z_grid=z_grid, s_grid=s_grid, frequencies=freqs, modes=modes, design=design)
