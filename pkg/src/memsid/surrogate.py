"""Inverse polynomial surrogate: sensor parameters as functions of modal frequencies.

For every size-d subset ("combination") of the K modes in a parameter matrix,
each varying parameter is fitted as a tensor-product polynomial in the
combination's frequencies. Inputs are mapped affinely onto [-1, 1] per axis
before fitting; the map is stored with the surface.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .plate_model import ModeIndex, ParameterMatrix, SensorDesign, StressState, modal_frequencies

PARAM_AXES = {"z": 0, "s": 1}


class SurrogateWarning(UserWarning):
    pass


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyCombo:
    index: int
    modes: tuple[int, ...]


@dataclass(frozen=True)
class PolySurface:
    """Tensor-product polynomial ``sum c[e] * prod(x_v ** e_v)`` over scaled inputs.

    ``coefficients`` has shape ``(degree + 1,) * d``; entry ``[i, j]`` multiplies
    ``x1**i * x2**j`` with ``x = (f - offset) / scale``.
    """

    target: str
    modes: tuple[int, ...]
    degree: int
    coefficients: np.ndarray
    offset: np.ndarray
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.modes)

    def exponents(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.degree + 1), repeat=self.dim))

    def scaled(self, freqs) -> np.ndarray:
        f = np.asarray(freqs, dtype=float)
        return (f - self.offset) / self.scale

    def __call__(self, freqs):
        """Evaluate at ``freqs`` with trailing axis of length d."""
        x = self.scaled(freqs)
        if self.dim == 1:
            return P.polyval(x[..., 0], self.coefficients)
        return P.polyval2d(x[..., 0], x[..., 1], self.coefficients)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "modes": list(self.modes),
            "degree": self.degree,
            "coefficients": self.coefficients.ravel().tolist(),
            "offset": self.offset.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PolySurface:
        dim = len(d["modes"])
        shape = (d["degree"] + 1,) * dim
        return cls(
            target=d["target"],
            modes=tuple(d["modes"]),
            degree=int(d["degree"]),
            coefficients=np.array(d["coefficients"], dtype=float).reshape(shape),
            offset=np.array(d["offset"], dtype=float),
            scale=np.array(d["scale"], dtype=float),
        )


def design_matrix(x: np.ndarray, degree: int) -> np.ndarray:
    """Vandermonde matrix of the tensor basis for scaled inputs ``x`` (n, d)."""
    if x.shape[1] == 1:
        return P.polyvander(x[:, 0], degree)
    if x.shape[1] == 2:
        return P.polyvander2d(x[:, 0], x[:, 1], [degree, degree])
    raise ValueError("only 1 or 2 frequency variables are supported")


def affine_map(freqs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = freqs.min(axis=0), freqs.max(axis=0)
    scale = (hi - lo) / 2.0
    scale[scale == 0] = 1.0
    return (hi + lo) / 2.0, scale


def fit_surface(
    freqs: np.ndarray,
    target: np.ndarray,
    degree: int,
    modes: Sequence[int],
    name: str,
    allow_underdetermined: bool = False,
) -> PolySurface:
    """Least-squares fit (SVD based) of one parameter on one combination."""
    freqs = np.asarray(freqs, dtype=float).reshape(len(target), -1)
    offset, scale = affine_map(freqs)
    A = design_matrix((freqs - offset) / scale, degree)
    rank = np.linalg.matrix_rank(A)
    if rank < A.shape[1] and not allow_underdetermined:
        raise RankDeficientError(
            f"design matrix for modes {tuple(modes)} at degree {degree} has rank {rank} < {A.shape[1]}"
        )
    coef, *_ = np.linalg.lstsq(A, np.asarray(target, dtype=float), rcond=None)
    shape = (degree + 1,) * freqs.shape[1]
    return PolySurface(name, tuple(modes), degree, coef.reshape(shape), offset, scale)


class OscillationReport(NamedTuple):
    passed: bool
    worst_excess: float


def parameter_values(pm: ParameterMatrix, name: str) -> np.ndarray:
    Z, S = np.meshgrid(pm.z_grid, pm.s_grid, indexing="ij")
    return Z if name == "z" else S


def midpoint_neighbourhoods(pm: ParameterMatrix) -> list[tuple[tuple[int, int], ...]]:
    """Node index groups whose parameter-space midpoints are probed for oscillation.

    Adjacent node pairs along every varying axis, plus the four corners of
    every cell when two parameters vary.
    """
    nz, ns = pm.z_grid.size, pm.s_grid.size
    groups = []
    for i in range(nz - 1):
        for j in range(ns):
            groups.append(((i, j), (i + 1, j)))
    for i in range(nz):
        for j in range(ns - 1):
            groups.append(((i, j), (i, j + 1)))
    for i in range(nz - 1):
        for j in range(ns - 1):
            groups.append(((i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)))
    return groups


def midpoint_frequencies(pm: ParameterMatrix, groups) -> np.ndarray:
    """Frequencies at the parameter midpoints of ``groups``.

    Computed with the forward model when the matrix carries its design,
    otherwise approximated by the mean of the neighbouring nodes.
    """
    if pm.design is None:
        return np.array([np.mean([pm.frequencies[n] for n in g], axis=0) for g in groups])
    geom, mat = pm.design.geometry, pm.design.material
    out = []
    for g in groups:
        z = np.mean([pm.z_grid[i] for i, _ in g])
        s = np.mean([pm.s_grid[j] for _, j in g])
        modes = modal_frequencies(geom.with_thickness(z), mat, StressState(s), pm.mode_count)
        out.append([f for _, f in modes])
    return np.array(out)


def oscillation_check(
    surface: PolySurface,
    pm: ParameterMatrix,
    accuracy: float = 1e-3,
    full_scale: float | None = None,
    _cache: dict | None = None,
) -> OscillationReport:
    """Evaluate the surface between grid nodes and look for overshoot.

    At the parameter-space midpoint of every pair of adjacent nodes (and of
    every cell) the surface value must stay inside the range of the
    surrounding node parameter values, widened by ``accuracy * full_scale``.
    """
    values = parameter_values(pm, surface.target)
    if full_scale is None:
        full_scale = float(np.max(np.abs(values))) or 1.0
    tol = accuracy * full_scale
    groups = midpoint_neighbourhoods(pm)
    if not groups:
        return OscillationReport(True, 0.0)
    if _cache is not None and "freqs" in _cache:
        F = _cache["freqs"]
    else:
        F = midpoint_frequencies(pm, groups)
        if _cache is not None:
            _cache["freqs"] = F
    mid = surface(F[:, list(surface.modes)])
    lo = np.array([min(values[n] for n in g) for g in groups])
    hi = np.array([max(values[n] for n in g) for g in groups])
    excess = float(np.max(np.maximum(lo - mid, mid - hi)))
    return OscillationReport(excess <= tol, excess / full_scale)


class Estimate(NamedTuple):
    values: tuple[float, ...]
    extrapolated: bool


@dataclass(frozen=True)
class InverseSurrogate:
    params: tuple[str, ...]
    modes: tuple[ModeIndex, ...]
    combos: tuple[FrequencyCombo, ...]
    surfaces: dict[int, tuple[PolySurface, ...]]
    fit_report: dict[int, float]
    frequency_domain: dict[int, tuple[np.ndarray, np.ndarray]]
    accuracy: float
    full_scale: dict[str, float]
    degenerate_groups: tuple[tuple[int, ...], ...] = ()
    skipped_combos: tuple[FrequencyCombo, ...] = ()
    fixed: dict[str, float] = field(default_factory=dict)
    grid: dict[str, list[float]] = field(default_factory=dict)
    design: dict | None = None
    warnings: tuple[str, ...] = ()

    @property
    def param_count(self) -> int:
        return len(self.params)

    @property
    def mode_count(self) -> int:
        return len(self.modes)

    @property
    def accepted(self) -> bool:
        return all(err <= self.accuracy for err in self.fit_report.values())

    def combo(self, index: int) -> FrequencyCombo:
        for c in self.combos:
            if c.index == index:
                return c
        raise KeyError(f"no fitted combination with index {index}")

    def degrees(self) -> dict[int, int]:
        return {i: surfs[0].degree for i, surfs in self.surfaces.items()}

    def to_dict(self) -> dict:
        return {
            "params": list(self.params),
            "modes": [[mi.m, mi.n] for mi in self.modes],
            "combos": [{"index": c.index, "modes": list(c.modes)} for c in self.combos],
            "skipped_combos": [{"index": c.index, "modes": list(c.modes)} for c in self.skipped_combos],
            "surfaces": {str(i): [s.to_dict() for s in surfs] for i, surfs in self.surfaces.items()},
            "fit_report": {str(i): e for i, e in self.fit_report.items()},
            "frequency_domain": {
                str(i): [lo.tolist(), hi.tolist()] for i, (lo, hi) in self.frequency_domain.items()
            },
            "accuracy": self.accuracy,
            "full_scale": dict(self.full_scale),
            "degenerate_groups": [list(g) for g in self.degenerate_groups],
            "fixed": dict(self.fixed),
            "grid": {k: list(v) for k, v in self.grid.items()},
            "design": self.design,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> InverseSurrogate:
        return cls(
            params=tuple(d["params"]),
            modes=tuple(ModeIndex(m, n) for m, n in d["modes"]),
            combos=tuple(FrequencyCombo(c["index"], tuple(c["modes"])) for c in d["combos"]),
            skipped_combos=tuple(
                FrequencyCombo(c["index"], tuple(c["modes"])) for c in d.get("skipped_combos", [])
            ),
            surfaces={
                int(i): tuple(PolySurface.from_dict(s) for s in surfs) for i, surfs in d["surfaces"].items()
            },
            fit_report={int(i): float(e) for i, e in d["fit_report"].items()},
            frequency_domain={
                int(i): (np.array(lo, dtype=float), np.array(hi, dtype=float))
                for i, (lo, hi) in d["frequency_domain"].items()
            },
            accuracy=float(d["accuracy"]),
            full_scale={k: float(v) for k, v in d["full_scale"].items()},
            degenerate_groups=tuple(tuple(g) for g in d.get("degenerate_groups", [])),
            fixed={k: float(v) for k, v in d.get("fixed", {}).items()},
            grid={k: [float(x) for x in v] for k, v in d.get("grid", {}).items()},
            design=d.get("design"),
            warnings=tuple(d.get("warnings", [])),
        )

    def save(self, path: str | Path) -> None:
        # json writes floats with repr(), the shortest string that round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> InverseSurrogate:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def sensor_design(self) -> SensorDesign | None:
        return SensorDesign.from_dict(self.design) if self.design is not None else None


def enumerate_combos(mode_count: int, d: int, degenerate_groups=()) -> tuple[list[FrequencyCombo], list[FrequencyCombo]]:
    """All C(K, d) combinations; those mixing members of one degenerate group are skipped."""
    group_of = {}
    for g, members in enumerate(degenerate_groups):
        for m in members:
            group_of[m] = g
    kept, skipped = [], []
    for index, modes in enumerate(itertools.combinations(range(mode_count), d)):
        groups = [group_of.get(m) for m in modes]
        tagged = [g for g in groups if g is not None]
        combo = FrequencyCombo(index, modes)
        (skipped if len(tagged) != len(set(tagged)) else kept).append(combo)
    return kept, skipped


def fit_inverse(pm: ParameterMatrix, accuracy: float = 1e-3, max_degree: int = 4) -> InverseSurrogate:
    """Fit inverse surfaces for every usable frequency combination.

    The degree is the lowest one whose maximum error over all training nodes,
    relative to the parameter's full-scale value, is within ``accuracy``. If
    none qualifies up to ``max_degree`` the best-achieved degree is kept and a
    warning is recorded; so is any overshoot found by ``oscillation_check``.
    """
    if accuracy <= 0:
        raise ValueError("accuracy must be > 0")
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    params = pm.varying
    d = len(params)
    groups = tuple(pm.degenerate_groups())
    combos, skipped = enumerate_combos(pm.mode_count, d, groups)
    if not combos:
        raise RankDeficientError("every frequency combination involves degenerate modes")

    targets = {name: parameter_values(pm, name).ravel() for name in params}
    full_scale = {name: float(np.max(np.abs(v))) or 1.0 for name, v in targets.items()}
    n_nodes = pm.z_grid.size * pm.s_grid.size

    surfaces, report, domain, notes = {}, {}, {}, []
    cache: dict = {}
    for combo in combos:
        F = pm.frequencies[..., list(combo.modes)].reshape(n_nodes, d)
        best = None
        for degree in range(1, max_degree + 1):
            if (degree + 1) ** d > n_nodes:
                break
            surfs = tuple(fit_surface(F, targets[name], degree, combo.modes, name) for name in params)
            err = max(
                float(np.max(np.abs(s(F) - targets[s.target]))) / full_scale[s.target] for s in surfs
            )
            if best is None or err < best[1]:
                best = (surfs, err)
            if err <= accuracy:
                best = (surfs, err)
                break
        surfs, err = best
        if err > accuracy:
            notes.append(
                f"combination {combo.index} {combo.modes}: required accuracy {accuracy:g} is not reached "
                f"(best {err:.3g} at degree {surfs[0].degree})"
            )
        for s in surfs:
            osc = oscillation_check(s, pm, accuracy, full_scale[s.target], cache)
            if not osc.passed:
                notes.append(
                    f"combination {combo.index} {combo.modes}, parameter {s.target}: oscillation between "
                    f"reference points ({osc.worst_excess:.3g} of full scale); recalculate the parameter "
                    "matrix with closer reference points"
                )
        surfaces[combo.index] = surfs
        report[combo.index] = err
        domain[combo.index] = (F.min(axis=0), F.max(axis=0))

    for note in notes:
        warnings.warn(note, SurrogateWarning, stacklevel=2)

    fixed = {}
    if pm.s_grid.size == 1:
        fixed["s"] = float(pm.s_grid[0])
    if pm.z_grid.size == 1:
        fixed["z"] = float(pm.z_grid[0])
    return InverseSurrogate(
        params=params,
        modes=pm.modes,
        combos=tuple(combos),
        surfaces=surfaces,
        fit_report=report,
        frequency_domain=domain,
        accuracy=accuracy,
        full_scale=full_scale,
        degenerate_groups=groups,
        skipped_combos=tuple(skipped),
        fixed=fixed,
        grid={"z": pm.z_grid.tolist(), "s": pm.s_grid.tolist()},
        design=pm.design.to_dict() if pm.design is not None else None,
        warnings=tuple(notes),
    )


def evaluate(surrogate: InverseSurrogate, combo_index: int, freqs: Sequence[float]) -> Estimate:
    """Parameter estimate p_i of combination ``combo_index``; extrapolation is flagged, not fatal."""
    surfs = surrogate.surfaces[combo_index]
    f = np.asarray(freqs, dtype=float)
    if f.shape != (surrogate.param_count,):
        raise ValueError(f"expected {surrogate.param_count} frequencies, got {f.shape}")
    lo, hi = surrogate.frequency_domain[combo_index]
    extrapolated = bool(np.any(f < lo) or np.any(f > hi))
    return Estimate(tuple(float(s(f)) for s in surfs), extrapolated)


def evaluate_many(surrogate: InverseSurrogate, combo_index: int, freqs: np.ndarray):
    """Vectorised :func:`evaluate` over leading axes; returns (values[..., d], extrapolated[...])."""
    surfs = surrogate.surfaces[combo_index]
    f = np.asarray(freqs, dtype=float)
    lo, hi = surrogate.frequency_domain[combo_index]
    extrapolated = np.any((f < lo) | (f > hi), axis=-1)
    return np.stack([s(f) for s in surfs], axis=-1), extrapolated
