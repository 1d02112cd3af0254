"""Command-line entry point.

Exit codes: 0 success, 1 a quality threshold was not met, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings

from .identify import Classification
from .plate_model import DomainError, build_parameter_matrix, load_design
from .static_correlate import adapt_gain, sweep, write_sweep_rows
from .response_synth import synthesize
from .surrogate import InverseSurrogate, SurrogateWarning, fit_inverse
from .units import UnitError, parse_range
from .wafer_harness import (
    SpecError,
    die_truth,
    export_report,
    load_calibration,
    load_wafer_spec,
    parse_die_id,
    read_report_csv,
    run_characterization,
    run_wafer,
    save_calibration,
)

log = logging.getLogger("memsid")

EXIT_OK, EXIT_THRESHOLD, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _range(text: str, unit: str):
    try:
        return parse_range(text)
    except UnitError as exc:
        if any(text.rstrip().endswith(u) for u in ("m", "Pa")):
            raise
        raise UnitError(f"{exc} (e.g. ...{unit})") from None


def cmd_build_surrogate(args) -> int:
    design = load_design(args.design)
    z = _range(args.z_grid, "um")
    s = _range(args.s_grid, "MPa")
    pm = build_parameter_matrix(design, z, s, args.modes)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SurrogateWarning)
        sur = fit_inverse(pm, accuracy=args.accuracy, max_degree=args.max_degree)
    sur.save(args.out)
    for w in caught:
        log.warning("%s", w.message)
    print(f"degrees per combo: {sur.degrees()}; skipped combos: {len(sur.skipped_combos)}")
    return EXIT_OK if sur.accepted else EXIT_THRESHOLD


def cmd_characterize(args) -> int:
    spec = load_wafer_spec(args.spec)
    sur = InverseSurrogate.load(args.surrogate)
    report, results = run_characterization(spec, sur, args.dies, args.workers)
    save_calibration(report, args.out, [name for name, _ in results], spec.design.name)
    print(f"calibrated stress {report.calibrated_stress / 1e6:.3f} MPa from {report.n_used}/{report.n_dies} dies")
    return EXIT_OK


def cmd_wafer_test(args) -> int:
    spec = load_wafer_spec(args.spec)
    sur = InverseSurrogate.load(args.surrogate)
    cal = load_calibration(args.calibration) if args.calibration else None
    report = run_wafer(spec, sur, cal, workers=args.workers)
    export_report(report, "csv", args.report)
    if args.json:
        export_report(report, "json", args.json)
    counts = report.summary["counts"]
    print(", ".join(f"{k}: {v}" for k, v in counts.items()))
    if args.max_reject_rate is not None:
        n = report.summary["die_count"]
        rejected = n - counts[Classification.VALID.value]
        if n and rejected / n > args.max_reject_rate:
            return EXIT_THRESHOLD
    return EXIT_THRESHOLD if counts["Error"] else EXIT_OK


def cmd_static_correlate(args) -> int:
    spec = load_wafer_spec(args.spec)
    st = spec.static
    rows = read_report_csv(args.report)
    worst, failed, n = 0.0, 0, 0
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        first = True
        for r in rows:
            if r.status != Classification.VALID.value:
                continue
            row, col = parse_die_id(r.die_id)
            truth = die_truth(spec, row, col)
            measured = sweep(truth, spec.design.piezo, st.pressures, st.noise)
            ident = (r.thickness_um * 1e-6, r.stress_MPa * 1e6)
            corr = adapt_gain(measured, ident, spec.design)
            write_sweep_rows(writer, measured, r.die_id, corr.simulated, header=first)
            first = False
            n += 1
            worst = max(worst, corr.max_rel_voltage_error)
            failed += corr.max_rel_voltage_error >= st.max_error
        if first:
            writer.writerow(["die_id", "pressure_bar", "deflection_um", "voltage_mV", "simulated_mV"])
    print(f"{n} dies correlated; worst relative voltage error {worst:.4f}; {failed} above {st.max_error:g}")
    return EXIT_THRESHOLD if failed else EXIT_OK


def cmd_simulate_response(args) -> int:
    spec = load_wafer_spec(args.spec)
    try:
        row, col = parse_die_id(args.die)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not spec.in_grid(row, col):
        raise UsageError(f"die {args.die} lies outside the {spec.rows}x{spec.cols} grid")
    synthesize(die_truth(spec, row, col), spec.acquisition).to_csv(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memsid", description="Modal identification of membrane pressure sensors")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-surrogate", help="fit the inverse surrogate on a (z, s) grid")
    b.add_argument("--design", required=True)
    b.add_argument("--z-grid", required=True, help="start:stop:step with unit, e.g. 12:18:0.5um")
    b.add_argument("--s-grid", required=True, help="start:stop:step with unit, e.g. 0:100:10MPa")
    b.add_argument("--modes", type=int, default=4)
    b.add_argument("--accuracy", type=float, default=1e-3)
    b.add_argument("--max-degree", type=int, default=4)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_surrogate)

    c = sub.add_parser("characterize", help="two-parameter identification on a calibration subset")
    c.add_argument("--spec", required=True)
    c.add_argument("--surrogate", required=True)
    c.add_argument("--dies", type=int, default=None)
    c.add_argument("--out", required=True)
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_characterize)

    w = sub.add_parser("wafer-test", help="thickness identification and classification of every die")
    w.add_argument("--spec", required=True)
    w.add_argument("--surrogate", required=True)
    w.add_argument("--calibration")
    w.add_argument("--report", required=True)
    w.add_argument("--json")
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--max-reject-rate", type=float, default=None, help="exit 1 above this non-Valid fraction")
    w.set_defaults(func=cmd_wafer_test)

    s = sub.add_parser("static-correlate", help="pressure sweeps and gain adaptation for Valid dies")
    s.add_argument("--spec", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_static_correlate)

    r = sub.add_parser("simulate-response", help="write one die's synthetic frequency response")
    r.add_argument("--spec", required=True)
    r.add_argument("--die", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_simulate_response)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, SpecError, UnitError, DomainError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"memsid {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
