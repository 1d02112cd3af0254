"""Peak-to-mode assignment, EIE evaluation and die classification."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .peak_detect import Peak
from .surrogate import InverseSurrogate, evaluate_many


class Classification(str, enum.Enum):
    VALID = "Valid"
    TYPE1_NO_MEMBRANE = "Type1NoMembrane"
    TYPE2_ASYMMETRIC = "Type2Asymmetric"
    OUT_OF_RANGE = "OutOfRange"


class IdentMode(str, enum.Enum):
    CHARACTERIZATION = "characterization"
    WAFER_TEST = "wafer_test"


class ConfigMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class IdentificationConfig:
    parameter_ranges: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {"z": (12e-6, 18e-6), "s": (0.0, 100e6)}
    )
    max_eie: dict[str, float] = field(default_factory=lambda: {"z": 0.25e-6, "s": 25e6})
    max_eie_n: float | None = None
    mode_count_K: int = 3
    param_count_d: int = 1
    degenerate_split_tolerance: float = 0.005
    # a lone peak this close to a shared degenerate peak is read as its split partner
    degenerate_split_window: float = 0.05
    degenerate_split_min_ratio: float = 0.25
    mode: IdentMode = IdentMode.WAFER_TEST

    def __post_init__(self):
        for name, (lo, hi) in self.parameter_ranges.items():
            if not lo < hi:
                raise ValueError(f"empty range for parameter {name}")
        if any(v <= 0 for v in self.max_eie.values()):
            raise ValueError("EIE limits must be > 0")
        if self.max_eie_n is not None and self.max_eie_n <= 0:
            raise ValueError("max_eie_n must be > 0")
        if not 0 < self.degenerate_split_tolerance < self.degenerate_split_window:
            raise ValueError("need 0 < degenerate_split_tolerance < degenerate_split_window")
        if not 0 < self.degenerate_split_min_ratio <= 1:
            raise ValueError("degenerate_split_min_ratio must be in (0, 1]")
        if self.mode_count_K < self.param_count_d:
            raise ValueError("mode_count_K must be >= param_count_d")
        object.__setattr__(self, "mode", IdentMode(self.mode))

    @classmethod
    def characterization(cls, **kw) -> IdentificationConfig:
        kw.setdefault("mode_count_K", 4)
        return cls(param_count_d=2, mode=IdentMode.CHARACTERIZATION, **kw)

    @classmethod
    def wafer_test(cls, **kw) -> IdentificationConfig:
        kw.setdefault("mode_count_K", 3)
        return cls(param_count_d=1, mode=IdentMode.WAFER_TEST, **kw)


@dataclass(frozen=True)
class IdentificationResult:
    params: tuple[str, ...]
    n_peaks: int
    assignment: tuple[int, ...] = ()
    assigned_freqs: tuple[float, ...] = ()
    per_combo_params: tuple[tuple[float, ...], ...] = ()
    mean_params: tuple[float, ...] = ()
    eie: tuple[float, ...] = ()
    eie_n: tuple[float | None, ...] = ()
    split: float | None = None
    extrapolated: bool = False
    classification: Classification | None = None
    failure_bit: bool = True

    @property
    def feasible(self) -> bool:
        return bool(self.assignment)

    @property
    def peak_to_modes(self) -> dict[int, tuple[int, ...]]:
        """Detected-peak index -> mode positions it was assigned to."""
        out: dict[int, list[int]] = {}
        for mode_pos, peak in enumerate(self.assignment):
            out.setdefault(peak, []).append(mode_pos)
        return {k: tuple(v) for k, v in out.items()}

    def param(self, name: str) -> float | None:
        if name not in self.params or not self.mean_params:
            return None
        return self.mean_params[self.params.index(name)]

    def eie_of(self, name: str) -> float | None:
        if name not in self.params or not self.eie:
            return None
        return self.eie[self.params.index(name)]

    def eie_n_of(self, name: str) -> float | None:
        if name not in self.params or not self.eie_n:
            return None
        return self.eie_n[self.params.index(name)]


def eie(estimates: Sequence[Sequence[float]]) -> tuple[tuple[float, ...], tuple[float | None, ...]]:
    """Spread max - min of the per-combination estimates, absolute and over the mean."""
    p = np.asarray(estimates, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[0] < 2:
        raise ValueError("EIE needs at least two estimates")
    spread = p.max(axis=0) - p.min(axis=0)
    mean = p.mean(axis=0)
    normed = tuple(float(s / m) if m != 0 else None for s, m in zip(spread, mean))
    return tuple(float(s) for s in spread), normed


def _scalar_objective(spread: np.ndarray, mean: np.ndarray) -> float:
    return float(np.sum(spread / np.where(mean != 0, np.abs(mean), np.inf)))


def _estimate_tables(peak_f: np.ndarray, surrogate: InverseSurrogate, cfg: IdentificationConfig):
    """Per combination: estimates for every ordered tuple of peaks plus feasibility mask."""
    d = surrogate.param_count
    P = peak_f.size
    if d == 1:
        grid = peak_f[:, None]
    else:
        a, b = np.meshgrid(peak_f, peak_f, indexing="ij")
        grid = np.stack([a, b], axis=-1)
    tables = {}
    for combo in surrogate.combos:
        vals, extrap = evaluate_many(surrogate, combo.index, grid)
        ok = np.ones(vals.shape[:-1], dtype=bool)
        for k, name in enumerate(surrogate.params):
            lo, hi = cfg.parameter_ranges.get(name, (-math.inf, math.inf))
            ok &= (vals[..., k] >= lo) & (vals[..., k] <= hi)
        tables[combo.index] = (combo.modes, vals, extrap, ok)
    assert all(t[1].shape[:d] == (P,) * d for t in tables.values())
    return tables


def _search(K: int, P: int, groups, tables, n_params):
    """Exhaustive search over order-preserving assignments of K modes to P peaks.

    Members of a degenerate group may share a peak; all other modes take
    strictly increasing peaks. Returns (assignment, estimates, extrapolated)
    of the minimal scalarised EIE, or None.
    """
    share_prev = [False] * K
    for g in groups:
        for j in g[1:]:
            share_prev[j] = True
    # combos checked as soon as their last mode is placed
    by_last: dict[int, list] = {}
    for modes, vals, extrap, ok in tables.values():
        by_last.setdefault(max(modes), []).append((modes, vals, extrap, ok))
    # peaks still needed after position j
    need_after = [0] * K
    for j in range(K - 2, -1, -1):
        need_after[j] = need_after[j + 1] + (0 if share_prev[j + 1] else 1)

    best = [math.inf, None]
    assign = [0] * K

    def rec(j: int, start: int):
        if j == K:
            est, ext = [], False
            for modes, vals, extrap, _ in tables.values():
                key = tuple(assign[m] for m in modes)
                est.append(vals[key])
                ext = ext or bool(extrap[key])
            est = np.asarray(est)
            score = _scalar_objective(est.max(axis=0) - est.min(axis=0), est.mean(axis=0))
            if score < best[0]:
                best[0] = score
                best[1] = (tuple(assign), est, ext)
            return
        for q in range(start, P - need_after[j]):
            assign[j] = q
            if all(ok[tuple(assign[m] for m in modes)] for modes, _, _, ok in by_last.get(j, ())):
                nxt = j + 1
                if nxt < K:
                    rec(nxt, q if share_prev[nxt] else q + 1)
                else:
                    rec(nxt, 0)

    rec(0, 0)
    return best[1]


def _group_split(peaks: Sequence[Peak], assignment, groups, cfg: IdentificationConfig) -> float | None:
    """Largest relative split seen across the degenerate groups.

    A group assigned to separate peaks is split by their spacing. A group
    sharing one peak is examined together with the unassigned peaks within
    ``degenerate_split_window`` of it: those at least
    ``degenerate_split_min_ratio`` as strong as the strongest of them are
    taken as the split pair.
    """
    f = np.array([p.frequency for p in peaks])
    amp = np.array([p.amplitude for p in peaks])
    split = None
    for g in groups:
        qs = sorted({assignment[m] for m in g})
        if len(qs) == 1:
            others = set(assignment) - set(qs)
            near = [
                n for n in range(len(f))
                if n not in others and abs(f[n] - f[qs[0]]) <= cfg.degenerate_split_window * f[qs[0]]
            ]
            qs = [n for n in near if amp[n] >= cfg.degenerate_split_min_ratio * amp[near].max()]
        if len(qs) > 1:
            s = float((f[qs].max() - f[qs].min()) / f[qs].mean())
            split = s if split is None else max(split, s)
    return split


def _distinct_slots(K: int, groups) -> int:
    return K - sum(len(g) - 1 for g in groups)


def assign_and_identify(
    peaks: Sequence[Peak], surrogate: InverseSurrogate, cfg: IdentificationConfig
) -> IdentificationResult:
    """Choose the peak-to-mode assignment with minimal EIE and fill in the result.

    Every combination's estimate must lie inside ``cfg.parameter_ranges`` for
    an assignment to be considered; the objective is the sum of EIE_N over the
    identified parameters.
    """
    if surrogate.mode_count != cfg.mode_count_K or surrogate.param_count != cfg.param_count_d:
        raise ConfigMismatchError(
            f"surrogate covers K={surrogate.mode_count}, d={surrogate.param_count}; "
            f"config asks for K={cfg.mode_count_K}, d={cfg.param_count_d}"
        )
    peaks = sorted(peaks, key=lambda p: p.frequency)
    peak_f = np.array([p.frequency for p in peaks], dtype=float)
    result = IdentificationResult(params=surrogate.params, n_peaks=len(peaks))
    groups = surrogate.degenerate_groups

    if peaks and len(peaks) >= _distinct_slots(cfg.mode_count_K, groups):
        tables = _estimate_tables(peak_f, surrogate, cfg)
        found = _search(cfg.mode_count_K, len(peaks), groups, tables, surrogate.param_count)
        if found is not None:
            assignment, est, ext = found
            spread, normed = eie(est)
            split = _group_split(peaks, assignment, groups, cfg)
            result = replace(
                result,
                assignment=assignment,
                assigned_freqs=tuple(float(peak_f[q]) for q in assignment),
                per_combo_params=tuple(tuple(float(v) for v in row) for row in est),
                mean_params=tuple(float(v) for v in est.mean(axis=0)),
                eie=spread,
                eie_n=normed,
                split=split,
                extrapolated=ext,
            )

    classification = classify(result, peaks, cfg, groups)
    return replace(result, classification=classification, failure_bit=_failure(result, classification, cfg))


def _limits_exceeded(result: IdentificationResult, cfg: IdentificationConfig) -> bool:
    for name, spread in zip(result.params, result.eie):
        limit = cfg.max_eie.get(name)
        if limit is not None and spread > limit:
            return True
    if cfg.max_eie_n is not None:
        if any(v is not None and abs(v) > cfg.max_eie_n for v in result.eie_n):
            return True
    return False


def _failure(result, classification, cfg) -> bool:
    return classification is not Classification.VALID or _limits_exceeded(result, cfg)


def classify(
    result: IdentificationResult,
    peaks: Sequence[Peak],
    cfg: IdentificationConfig,
    degenerate_groups=(),
) -> Classification:
    if not peaks:
        return Classification.TYPE1_NO_MEMBRANE
    if not result.feasible:
        # too few resonances for the expected modes reads as a missing membrane
        if len(peaks) < _distinct_slots(cfg.mode_count_K, degenerate_groups):
            return Classification.TYPE1_NO_MEMBRANE
        return Classification.OUT_OF_RANGE
    if result.split is not None and result.split > cfg.degenerate_split_tolerance:
        return Classification.TYPE2_ASYMMETRIC
    if _limits_exceeded(result, cfg):
        return Classification.TYPE2_ASYMMETRIC
    for name, value in zip(result.params, result.mean_params):
        lo, hi = cfg.parameter_ranges.get(name, (-math.inf, math.inf))
        if not lo <= value <= hi:
            return Classification.OUT_OF_RANGE
    return Classification.VALID


@dataclass(frozen=True)
class CharacterizationReport:
    calibrated_stress: float
    recommended_max_eie: dict[str, float]
    n_dies: int
    n_used: int
    percentile: float

    def to_dict(self) -> dict:
        return {
            "calibrated_stress_MPa": self.calibrated_stress / 1e6,
            "recommended_max_eie": {
                "z_um": self.recommended_max_eie.get("z", math.nan) * 1e6,
                "s_MPa": self.recommended_max_eie.get("s", math.nan) / 1e6,
            },
            "n_dies": self.n_dies,
            "n_used": self.n_used,
            "percentile": self.percentile,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CharacterizationReport:
        rec = d.get("recommended_max_eie", {})
        limits = {}
        if "z_um" in rec:
            limits["z"] = float(rec["z_um"]) * 1e-6
        if "s_MPa" in rec:
            limits["s"] = float(rec["s_MPa"]) * 1e6
        return cls(
            calibrated_stress=float(d["calibrated_stress_MPa"]) * 1e6,
            recommended_max_eie=limits,
            n_dies=int(d.get("n_dies", 0)),
            n_used=int(d.get("n_used", 0)),
            percentile=float(d.get("percentile", 95.0)),
        )


MIN_CALIBRATION_DIES = 12


def characterize(
    results: Sequence[IdentificationResult],
    cfg: IdentificationConfig,
    percentile: float = 95.0,
    min_dies: int = MIN_CALIBRATION_DIES,
) -> CharacterizationReport:
    """Calibrate the passivation stress and an EIE limit from d = 2 identifications."""
    if cfg.param_count_d != 2:
        raise ConfigMismatchError("characterization needs a two-parameter identification")
    if len(results) < min_dies:
        raise ValueError(f"characterization needs at least {min_dies} dies, got {len(results)}")
    valid = [r for r in results if r.classification is Classification.VALID]
    if not valid:
        raise ValueError("no calibration die was identified as valid")
    stress = float(np.median([r.param("s") for r in valid]))
    limits = {
        name: float(np.percentile([r.eie_of(name) for r in valid], percentile)) for name in valid[0].params
    }
    return CharacterizationReport(stress, limits, len(results), len(valid), percentile)
