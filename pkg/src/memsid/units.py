"""Unit-suffixed quantities at the CLI and file boundaries.

Internally everything is SI. Accepted suffixes: m, mm, um, nm, Pa, kPa, MPa,
GPa, bar, mbar, Hz, kHz, MHz.
"""

from __future__ import annotations

import re

import numpy as np

SCALE = {
    "m": 1.0,
    "mm": 1e-3,
    "um": 1e-6,
    "nm": 1e-9,
    "Pa": 1.0,
    "kPa": 1e3,
    "MPa": 1e6,
    "GPa": 1e9,
    "bar": 1e5,
    "mbar": 1e2,
    "Hz": 1.0,
    "kHz": 1e3,
    "MHz": 1e6,
}

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUANTITY = re.compile(rf"^\s*({_NUM})\s*([A-Za-z]*)\s*$")
_RANGE = re.compile(rf"^\s*({_NUM}):({_NUM}):({_NUM})\s*([A-Za-z]*)\s*$")


class UnitError(ValueError):
    pass


def _scale(unit: str, default: str | None) -> float:
    unit = unit or default
    if unit is None:
        raise UnitError("a unit suffix is required")
    try:
        return SCALE[unit]
    except KeyError:
        raise UnitError(f"unknown unit {unit!r}; expected one of {', '.join(SCALE)}") from None


def parse_quantity(text: str, default_unit: str | None = None) -> float:
    """``'15um'`` -> 1.5e-05."""
    m = _QUANTITY.match(text)
    if not m:
        raise UnitError(f"cannot parse quantity {text!r}")
    return float(m.group(1)) * _scale(m.group(2), default_unit)


def parse_range(text: str, default_unit: str | None = None) -> np.ndarray:
    """``'start:stop:step<unit>'`` with an inclusive stop, e.g. ``'12:18:0.5um'``."""
    m = _RANGE.match(text)
    if not m:
        raise UnitError(f"cannot parse range {text!r}; expected start:stop:step<unit>")
    start, stop, step = (float(m.group(i)) for i in (1, 2, 3))
    if step <= 0 or stop <= start:
        raise UnitError(f"range {text!r} must have start < stop and step > 0")
    count = int(round((stop - start) / step)) + 1
    if not np.isclose(start + (count - 1) * step, stop, rtol=1e-9, atol=1e-12 * abs(step)):
        raise UnitError(f"range {text!r}: step does not divide the interval")
    return np.linspace(start, stop, count) * _scale(m.group(4), default_unit)
