"""Wafer-level orchestration: simulated dies, characterization, wafer test, reports.

A wafer specification is a JSON document::

    {
      "design": "design.json",            # path (relative to this file) or inline object
      "grid": {"rows": 10, "cols": 20},
      "wafer_seed": 2007,
      "thickness_um": {"mean": 15.0, "sigma": 0.15},
      "stress_MPa": 50.0,
      "defect_rates": {"no_membrane": 0.0, "asymmetry": 0.0, "asymmetry_ratio": 0.02},
      "overrides": [{"die": "R3C7", "thickness_um": 15.2, "defect": {"kind": "asymmetry", "ratio": 0.02}}],
      "acquisition": {...}, "peak_detection": {...}, "identification": {...}, "static": {...}
    }

Die ids are ``R<row>C<col>`` with 1-based row and column numbers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .identify import (
    CharacterizationReport,
    Classification,
    IdentificationConfig,
    IdentificationResult,
    assign_and_identify,
    characterize,
)
from .peak_detect import DEFAULT_MIN_SEPARATION, DEFAULT_MIN_SNR, find_peaks, refine_lorentzian
from .plate_model import DomainError, SensorDesign, StressState, build_parameter_matrix
from .response_synth import AcquisitionSpec, DefectKind, DefectSpec, DieTruth, die_rng, synthesize
from .static_correlate import BAR, DEFAULT_PRESSURES, adapt_gain, sweep
from .surrogate import InverseSurrogate, fit_inverse

log = logging.getLogger(__name__)

STATUSES = tuple(c.value for c in Classification) + ("Error",)
REPORT_COLUMNS = (
    "die_id",
    "row",
    "col",
    "status",
    "thickness_um",
    "stress_MPa",
    "eie_um",
    "eie_n",
    "n_peaks",
    "static_max_err",
)
_DIE_ID = re.compile(r"^R(\d+)C(\d+)$")


class SpecError(ValueError):
    """Invalid wafer specification; ``line`` points into the source file when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def die_id(row: int, col: int) -> str:
    return f"R{row}C{col}"


def parse_die_id(text: str) -> tuple[int, int]:
    m = _DIE_ID.match(text.strip())
    if not m:
        raise ValueError(f"bad die id {text!r}; expected R<row>C<col>")
    return int(m.group(1)), int(m.group(2))


@dataclass(frozen=True)
class Override:
    thickness: float | None = None
    stress: float | None = None
    defect: DefectSpec | None = None


@dataclass(frozen=True)
class PeakSettings:
    min_snr: float = DEFAULT_MIN_SNR
    min_separation: float = DEFAULT_MIN_SEPARATION
    refine: bool = False
    window_bins: int = 7


@dataclass(frozen=True)
class IdentSettings:
    z_range: tuple[float, float] = (12e-6, 18e-6)
    s_range: tuple[float, float] = (0.0, 100e6)
    max_eie_z: float = 0.25e-6
    max_eie_s: float = 25e6
    max_eie_n: float | None = None
    modes_characterization: int = 4
    modes_wafer_test: int = 3
    split_tolerance: float = 0.005
    split_window: float = 0.05
    split_min_ratio: float = 0.25
    calibration_dies: int = 24
    percentile: float = 95.0

    def config(self, characterization: bool) -> IdentificationConfig:
        kw = dict(
            parameter_ranges={"z": self.z_range, "s": self.s_range},
            max_eie={"z": self.max_eie_z, "s": self.max_eie_s},
            max_eie_n=self.max_eie_n,
            degenerate_split_tolerance=self.split_tolerance,
            degenerate_split_window=self.split_window,
            degenerate_split_min_ratio=self.split_min_ratio,
        )
        if characterization:
            return IdentificationConfig.characterization(mode_count_K=self.modes_characterization, **kw)
        return IdentificationConfig.wafer_test(mode_count_K=self.modes_wafer_test, **kw)


@dataclass(frozen=True)
class StaticSettings:
    enabled: bool = False
    pressures: tuple[float, ...] = DEFAULT_PRESSURES
    noise: float = 0.01
    max_error: float = 0.10


@dataclass(frozen=True)
class WaferSpec:
    design: SensorDesign
    rows: int
    cols: int
    wafer_seed: int
    thickness_mean: float = 15e-6
    thickness_sigma: float = 0.15e-6
    stress: float = 50e6
    no_membrane_rate: float = 0.0
    asymmetry_rate: float = 0.0
    asymmetry_ratio: float = 0.02
    overrides: dict[tuple[int, int], Override] = field(default_factory=dict)
    excluded: frozenset[tuple[int, int]] = frozenset()
    acquisition: AcquisitionSpec = field(default_factory=AcquisitionSpec)
    peaks: PeakSettings = field(default_factory=PeakSettings)
    ident: IdentSettings = field(default_factory=IdentSettings)
    static: StaticSettings = field(default_factory=StaticSettings)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise SpecError("grid must have at least one row and one column")
        if self.thickness_mean <= 0 or self.thickness_sigma < 0:
            raise SpecError("thickness distribution needs mean > 0 and sigma >= 0")
        if not (0 <= self.no_membrane_rate and 0 <= self.asymmetry_rate and self.no_membrane_rate + self.asymmetry_rate <= 1):
            raise SpecError("defect rates must be non-negative and sum to at most 1")
        for rc in list(self.overrides) + list(self.excluded):
            if not self.in_grid(*rc):
                raise SpecError(f"die {die_id(*rc)} lies outside the {self.rows}x{self.cols} grid")

    def in_grid(self, row: int, col: int) -> bool:
        return 1 <= row <= self.rows and 1 <= col <= self.cols

    def dies(self) -> list[tuple[int, int]]:
        """Row-major die coordinates, excluded dies skipped."""
        return [
            (r, c)
            for r in range(1, self.rows + 1)
            for c in range(1, self.cols + 1)
            if (r, c) not in self.excluded
        ]


# ---------------------------------------------------------------- spec loading


def _line_of(text: str, needle: str) -> int | None:
    for k, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return k
    return None


def _pair(value, name):
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ValueError(f"{name} must be a [low, high] pair")
    return float(value[0]), float(value[1])


def _defect_from(value) -> DefectSpec:
    if value is None or value == "none":
        return DefectSpec()
    if isinstance(value, str):
        value = {"kind": value}
    kind = DefectKind(value["kind"])
    return DefectSpec(kind, float(value.get("ratio", 0.0)))


def _acquisition_from(d: dict) -> AcquisitionSpec:
    base = AcquisitionSpec()
    allowed = {
        "f_min_kHz", "f_max_kHz", "bin_count", "quality_factor", "noise_floor",
        "freq_jitter_sigma", "spurious_peak_rate", "measurement_points", "electrode_position",
    }
    _reject_unknown(d, allowed, "acquisition")
    return AcquisitionSpec(
        f_min=float(d.get("f_min_kHz", base.f_min / 1e3)) * 1e3,
        f_max=float(d.get("f_max_kHz", base.f_max / 1e3)) * 1e3,
        bin_count=int(d.get("bin_count", base.bin_count)),
        quality_factor=float(d.get("quality_factor", base.quality_factor)),
        noise_floor=float(d.get("noise_floor", base.noise_floor)),
        freq_jitter_sigma=float(d.get("freq_jitter_sigma", base.freq_jitter_sigma)),
        spurious_peak_rate=float(d.get("spurious_peak_rate", base.spurious_peak_rate)),
        measurement_points=tuple(tuple(p) for p in d.get("measurement_points", base.measurement_points)),
        electrode_position=tuple(d.get("electrode_position", base.electrode_position)),
    )


def _reject_unknown(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise KeyError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def spec_from_dict(data: dict, base_dir: Path | None = None) -> WaferSpec:
    """Build a :class:`WaferSpec` from parsed JSON; raises KeyError/ValueError/TypeError."""
    _reject_unknown(
        data,
        {
            "design", "grid", "wafer_seed", "thickness_um", "stress_MPa", "defect_rates",
            "overrides", "excluded", "acquisition", "peak_detection", "identification", "static",
        },
        "wafer spec",
    )
    if "wafer_seed" not in data:
        raise KeyError("wafer_seed is required (runs must be reproducible)")
    seed = data["wafer_seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ValueError("wafer_seed must be a non-negative integer")

    design_ref = data.get("design", {})
    if isinstance(design_ref, str):
        path = Path(design_ref)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        design = SensorDesign.from_dict(json.loads(path.read_text()))
    else:
        design = SensorDesign.from_dict(design_ref)

    grid = data.get("grid")
    if not isinstance(grid, dict) or "rows" not in grid or "cols" not in grid:
        raise KeyError("grid with rows and cols is required")
    rows, cols = int(grid["rows"]), int(grid["cols"])

    th = data.get("thickness_um", {})
    _reject_unknown(th, {"mean", "sigma"}, "thickness_um")
    rates = data.get("defect_rates", {})
    _reject_unknown(rates, {"no_membrane", "asymmetry", "asymmetry_ratio"}, "defect_rates")

    overrides = {}
    for entry in data.get("overrides", []):
        _reject_unknown(entry, {"die", "thickness_um", "stress_MPa", "defect"}, "override")
        rc = parse_die_id(entry["die"])
        if rc in overrides:
            raise ValueError(f"duplicate override for die {entry['die']}")
        overrides[rc] = Override(
            thickness=float(entry["thickness_um"]) * 1e-6 if "thickness_um" in entry else None,
            stress=float(entry["stress_MPa"]) * 1e6 if "stress_MPa" in entry else None,
            defect=_defect_from(entry["defect"]) if "defect" in entry else None,
        )
        if not (1 <= rc[0] <= rows and 1 <= rc[1] <= cols):
            raise ValueError(f"override die {entry['die']} lies outside the {rows}x{cols} grid")
    excluded = frozenset(parse_die_id(t) for t in data.get("excluded", []))

    pk = data.get("peak_detection", {})
    _reject_unknown(pk, {"min_snr", "min_separation_kHz", "refine", "window_bins"}, "peak_detection")
    peaks = PeakSettings(
        min_snr=float(pk.get("min_snr", DEFAULT_MIN_SNR)),
        min_separation=float(pk.get("min_separation_kHz", DEFAULT_MIN_SEPARATION / 1e3)) * 1e3,
        refine=bool(pk.get("refine", False)),
        window_bins=int(pk.get("window_bins", 7)),
    )

    idn = data.get("identification", {})
    _reject_unknown(
        idn,
        {
            "z_range_um", "s_range_MPa", "max_eie_um", "max_eie_s_MPa", "max_eie_n",
            "modes_characterization", "modes_wafer_test", "split_tolerance", "split_window", "split_min_ratio", "calibration_dies", "percentile",
        },
        "identification",
    )
    d0 = IdentSettings()
    z_lo, z_hi = _pair(idn.get("z_range_um", [v * 1e6 for v in d0.z_range]), "z_range_um")
    s_lo, s_hi = _pair(idn.get("s_range_MPa", [v / 1e6 for v in d0.s_range]), "s_range_MPa")
    ident = IdentSettings(
        z_range=(z_lo * 1e-6, z_hi * 1e-6),
        s_range=(s_lo * 1e6, s_hi * 1e6),
        max_eie_z=float(idn.get("max_eie_um", d0.max_eie_z * 1e6)) * 1e-6,
        max_eie_s=float(idn.get("max_eie_s_MPa", d0.max_eie_s / 1e6)) * 1e6,
        max_eie_n=None if idn.get("max_eie_n") is None else float(idn["max_eie_n"]),
        modes_characterization=int(idn.get("modes_characterization", d0.modes_characterization)),
        modes_wafer_test=int(idn.get("modes_wafer_test", d0.modes_wafer_test)),
        split_tolerance=float(idn.get("split_tolerance", d0.split_tolerance)),
        split_window=float(idn.get("split_window", d0.split_window)),
        split_min_ratio=float(idn.get("split_min_ratio", d0.split_min_ratio)),
        calibration_dies=int(idn.get("calibration_dies", d0.calibration_dies)),
        percentile=float(idn.get("percentile", d0.percentile)),
    )
    ident.config(True)  # validates ranges and limits
    ident.config(False)

    st = data.get("static", {})
    _reject_unknown(st, {"enabled", "pressures_bar", "noise", "max_error"}, "static")
    static = StaticSettings(
        enabled=bool(st.get("enabled", False)),
        pressures=tuple(float(p) * BAR for p in st.get("pressures_bar", [p / BAR for p in DEFAULT_PRESSURES])),
        noise=float(st.get("noise", 0.01)),
        max_error=float(st.get("max_error", 0.10)),
    )

    return WaferSpec(
        design=design,
        rows=rows,
        cols=cols,
        wafer_seed=seed,
        thickness_mean=float(th.get("mean", 15.0)) * 1e-6,
        thickness_sigma=float(th.get("sigma", 0.15)) * 1e-6,
        stress=float(data.get("stress_MPa", 50.0)) * 1e6,
        no_membrane_rate=float(rates.get("no_membrane", 0.0)),
        asymmetry_rate=float(rates.get("asymmetry", 0.0)),
        asymmetry_ratio=float(rates.get("asymmetry_ratio", 0.02)),
        overrides=overrides,
        excluded=excluded,
        acquisition=_acquisition_from(data.get("acquisition", {})),
        peaks=peaks,
        ident=ident,
        static=static,
    )


def load_wafer_spec(path: str | Path) -> WaferSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read spec: {exc}", str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"invalid JSON: {exc.msg} (column {exc.colno})", str(path), exc.lineno) from exc
    if not isinstance(data, dict):
        raise SpecError("top level must be a JSON object", str(path), 1)
    try:
        return spec_from_dict(data, path.parent)
    except SpecError as exc:
        raise SpecError(str(exc), str(path), _locate(text, str(exc))) from exc
    except (KeyError, ValueError, TypeError, DomainError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        raise SpecError(str(msg), str(path), _locate(text, str(msg))) from exc


def _locate(text: str, message: str) -> int | None:
    """Best-effort line number: a die id named in the message, else the most
    specific (last mentioned) quoted key."""
    for token in re.findall(r"R\d+C\d+", message):
        line = _line_of(text, f'"{token}"')
        if line:
            return line
    for token in reversed(re.findall(r"[A-Za-z_]+", message)):
        if len(token) > 2:
            line = _line_of(text, f'"{token}"')
            if line:
                return line
    return None


# ---------------------------------------------------------------- die truths


def die_truth(spec: WaferSpec, row: int, col: int) -> DieTruth:
    """Ground truth of one die; depends only on (wafer_seed, row, col)."""
    rng = die_rng([spec.wafer_seed, row, col])
    z = spec.thickness_mean + spec.thickness_sigma * rng.standard_normal()
    u = rng.uniform()
    if u < spec.no_membrane_rate:
        defect = DefectSpec.no_membrane()
    elif u < spec.no_membrane_rate + spec.asymmetry_rate:
        defect = DefectSpec.asymmetry(spec.asymmetry_ratio)
    else:
        defect = DefectSpec()
    stress = spec.stress
    synth_seed = int(rng.integers(0, 2**63 - 1))
    ov = spec.overrides.get((row, col))
    if ov is not None:
        z = ov.thickness if ov.thickness is not None else z
        stress = ov.stress if ov.stress is not None else stress
        defect = ov.defect if ov.defect is not None else defect
    return DieTruth(
        geometry=spec.design.geometry.with_thickness(z),
        stress=StressState(stress),
        defect=defect,
        rng_seed=synth_seed,
        material=spec.design.material,
    )


def calibration_dies(spec: WaferSpec, count: int) -> list[tuple[int, int]]:
    """Deterministic random subset of dies for characterization, row-major order."""
    dies = spec.dies()
    if count > len(dies):
        raise ValueError(f"requested {count} calibration dies from a wafer of {len(dies)}")
    rng = die_rng([spec.wafer_seed, 0xCA1])
    picked = rng.choice(len(dies), size=count, replace=False)
    return [dies[i] for i in sorted(picked)]


# ---------------------------------------------------------------- per-die pipeline


def detect(spec: WaferSpec, truth: DieTruth):
    resp = synthesize(truth, spec.acquisition)
    peaks = find_peaks(resp, spec.peaks.min_snr, spec.peaks.min_separation)
    if spec.peaks.refine:
        peaks = [refine_lorentzian(resp, p, spec.peaks.window_bins) for p in peaks]
    return peaks


def identify_die(spec: WaferSpec, truth: DieTruth, surrogate: InverseSurrogate, cfg) -> IdentificationResult:
    return assign_and_identify(detect(spec, truth), surrogate, cfg)


@dataclass(frozen=True)
class DieRow:
    die_id: str
    row: int
    col: int
    status: str
    thickness_um: float | None = None
    stress_MPa: float | None = None
    eie_um: float | None = None
    eie_n: float | None = None
    n_peaks: int = 0
    static_max_err: float | None = None


@dataclass(frozen=True)
class DieTruthRow:
    die_id: str
    true_thickness_um: float
    true_stress_MPa: float
    true_defect: str


@dataclass(frozen=True)
class _WaferTestContext:
    spec: WaferSpec
    surrogate: InverseSurrogate
    cfg: IdentificationConfig
    stress: float


def _wafer_test_die(ctx: _WaferTestContext, rc: tuple[int, int]) -> DieRow:
    row, col = rc
    name = die_id(row, col)
    try:
        truth = die_truth(ctx.spec, row, col)
        res = identify_die(ctx.spec, truth, ctx.surrogate, ctx.cfg)
        status = res.classification.value
        z = res.param("z")
        out = DieRow(
            name,
            row,
            col,
            status,
            thickness_um=None if z is None else z * 1e6,
            stress_MPa=ctx.stress / 1e6,
            eie_um=None if res.eie_of("z") is None else res.eie_of("z") * 1e6,
            eie_n=res.eie_n_of("z"),
            n_peaks=res.n_peaks,
        )
        if ctx.spec.static.enabled and res.classification is Classification.VALID:
            st = ctx.spec.static
            measured = sweep(truth, ctx.spec.design.piezo, st.pressures, st.noise)
            corr = adapt_gain(measured, (z, ctx.stress), ctx.spec.design)
            out = replace(out, static_max_err=corr.max_rel_voltage_error)
        return out
    except Exception as exc:  # per-die failures never abort the wafer
        log.warning("die %s failed: %s", name, exc)
        return DieRow(name, row, col, "Error")


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


class _Bound:
    """Picklable partial for process pools."""

    def __init__(self, fn, ctx):
        self.fn, self.ctx = fn, ctx

    def __call__(self, item):
        return self.fn(self.ctx, item)


# ---------------------------------------------------------------- surrogates


def same_design(a: SensorDesign, b: SensorDesign, rtol: float = 1e-9) -> bool:
    """Equal up to unit-conversion rounding; the nominal thickness is ignored
    because thickness is what gets identified."""
    da, db = a.to_dict(), b.to_dict()
    for d in (da, db):
        d.pop("thickness_um")
        d.pop("name")
    if da.keys() != db.keys():
        return False
    return all(np.allclose(da[k], db[k], rtol=rtol, atol=0) for k in da)


def check_design(spec: WaferSpec, surrogate: InverseSurrogate):
    if surrogate.design is not None and not same_design(surrogate.sensor_design(), spec.design):
        raise SpecError("surrogate was fitted for a different sensor design")


def wafer_test_surrogate(
    surrogate: InverseSurrogate,
    stress: float,
    mode_count: int = 3,
    design: SensorDesign | None = None,
) -> InverseSurrogate:
    """Thickness-only surrogate at a fixed (calibrated) stress on the same thickness grid."""
    design = design or surrogate.sensor_design()
    if design is None:
        raise ValueError("surrogate carries no design; pass one explicitly")
    z_grid = surrogate.grid.get("z")
    if not z_grid:
        raise ValueError("surrogate carries no thickness grid")
    pm = build_parameter_matrix(design, z_grid, [stress], mode_count)
    return fit_inverse(pm, accuracy=surrogate.accuracy)


# ---------------------------------------------------------------- runs


@dataclass
class WaferReport:
    rows: list[DieRow]
    truth: list[DieTruthRow] | None = None
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.summary:
            self.summary = summarize(self.rows, self.truth)

    def to_dict(self) -> dict:
        out = {"rows": [asdict(r) for r in self.rows], "summary": self.summary}
        if self.truth is not None:
            out["truth"] = [asdict(t) for t in self.truth]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> WaferReport:
        truth = d.get("truth")
        return cls(
            rows=[DieRow(**r) for r in d["rows"]],
            truth=None if truth is None else [DieTruthRow(**t) for t in truth],
            summary=d.get("summary", {}),
        )


def summarize(rows: Sequence[DieRow], truth: Sequence[DieTruthRow] | None = None) -> dict:
    counts = {s: 0 for s in STATUSES}
    for r in rows:
        counts[r.status] += 1
    valid = [r.thickness_um for r in rows if r.status == Classification.VALID.value]
    summary = {
        "die_count": len(rows),
        "counts": counts,
        "thickness_mean_um": float(np.mean(valid)) if valid else None,
        "thickness_std_um": float(np.std(valid, ddof=1)) if len(valid) > 1 else None,
    }
    if truth is not None:
        by_id = {t.die_id: t for t in truth}
        fp = fn = 0
        for r in rows:
            t = by_id.get(r.die_id)
            if t is None:
                continue
            clean = t.true_defect == DefectKind.NONE.value
            is_valid = r.status == Classification.VALID.value
            fp += clean and not is_valid
            fn += (not clean) and is_valid
        summary["false_positives"] = fp
        summary["false_negatives"] = fn
    return summary


def _truth_row(spec: WaferSpec, rc) -> DieTruthRow:
    t = die_truth(spec, *rc)
    return DieTruthRow(
        die_id(*rc), t.geometry.thickness_z * 1e6, t.stress.passivation_stress_s / 1e6, t.defect.kind.value
    )


def run_wafer(
    spec: WaferSpec,
    surrogate: InverseSurrogate,
    calibration: CharacterizationReport | None = None,
    workers: int = 1,
    dies: Sequence[tuple[int, int]] | None = None,
) -> WaferReport:
    """Wafer-test every die; rows come back in row-major order whatever ``workers`` is.

    ``surrogate`` is either the thickness-only surrogate, or the two-parameter
    one together with a ``calibration`` that fixes the stress.
    """
    check_design(spec, surrogate)
    if surrogate.param_count == 2:
        if calibration is None:
            raise ValueError("a two-parameter surrogate needs a calibration to fix the stress")
        surrogate = wafer_test_surrogate(
            surrogate, calibration.calibrated_stress, spec.ident.modes_wafer_test, spec.design
        )
    stress = surrogate.fixed.get("s")
    if stress is None:
        raise ValueError("wafer test needs a surrogate at fixed stress")
    ctx = _WaferTestContext(spec, surrogate, spec.ident.config(False), stress)
    dies = list(spec.dies() if dies is None else dies)
    rows = _map(_Bound(_wafer_test_die, ctx), dies, workers)
    truth = [_truth_row(spec, rc) for rc in dies]
    return WaferReport(rows, truth)


def _characterize_die(ctx: _WaferTestContext, rc) -> IdentificationResult:
    truth = die_truth(ctx.spec, *rc)
    return identify_die(ctx.spec, truth, ctx.surrogate, ctx.cfg)


def run_characterization(
    spec: WaferSpec,
    surrogate: InverseSurrogate,
    n_dies: int | None = None,
    workers: int = 1,
) -> tuple[CharacterizationReport, list[tuple[str, IdentificationResult]]]:
    """Two-parameter identification on the calibration subset."""
    check_design(spec, surrogate)
    if surrogate.param_count != 2:
        raise ValueError("characterization needs the two-parameter (thickness, stress) surrogate")
    cfg = spec.ident.config(True)
    dies = calibration_dies(spec, n_dies or spec.ident.calibration_dies)
    ctx = _WaferTestContext(spec, surrogate, cfg, math.nan)
    results = _map(_Bound(_characterize_die, ctx), dies, workers)
    report = characterize(results, cfg, spec.ident.percentile)
    return report, [(die_id(*rc), r) for rc, r in zip(dies, results)]


# ---------------------------------------------------------------- export


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.9g}"
    return str(value)


def report_csv(report: WaferReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


def export_report(report: WaferReport, format: str, path: str | Path) -> None:
    if format == "csv":
        text = report_csv(report)
    elif format == "json":
        text = json.dumps(report.to_dict(), indent=1, sort_keys=False) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_report_csv(path: str | Path) -> list[DieRow]:
    def num(v, cast=float):
        return None if v == "" else cast(v)

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected report columns {reader.fieldnames}")
        return [
            DieRow(
                r["die_id"],
                int(r["row"]),
                int(r["col"]),
                r["status"],
                num(r["thickness_um"]),
                num(r["stress_MPa"]),
                num(r["eie_um"]),
                num(r["eie_n"]),
                int(r["n_peaks"]),
                num(r["static_max_err"]),
            )
            for r in reader
        ]


def save_calibration(report: CharacterizationReport, path, dies: Sequence[str] = (), design_name: str = ""):
    data = report.to_dict()
    data["design"] = design_name
    data["dies"] = list(dies)
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def load_calibration(path) -> CharacterizationReport:
    return CharacterizationReport.from_dict(json.loads(Path(path).read_text()))
