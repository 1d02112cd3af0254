import numpy as np
import pytest

from memsid.units import UnitError, parse_quantity, parse_range


@pytest.mark.parametrize(
    "text,value",
    [("15um", 15e-6), ("50MPa", 50e6), ("0.5bar", 5e4), ("72.5kHz", 72.5e3), ("1e3 Hz", 1e3), ("-2mm", -2e-3)],
)
def test_quantities(text, value):
    assert parse_quantity(text) == pytest.approx(value, rel=1e-15)


def test_default_unit_and_errors():
    assert parse_quantity("3", default_unit="um") == pytest.approx(3e-6)
    for bad in ("3", "3 furlongs", "um", ""):
        with pytest.raises(UnitError):
            parse_quantity(bad)


def test_ranges():
    np.testing.assert_allclose(parse_range("12:18:0.5um"), np.arange(12, 18.01, 0.5) * 1e-6, rtol=1e-14)
    assert parse_range("0:100:10MPa").size == 11
    for bad in ("12:18:0.7um", "18:12:1um", "12:18um", "1:2:0um"):
        with pytest.raises(UnitError):
            parse_range(bad)
