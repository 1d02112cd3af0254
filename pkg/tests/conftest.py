import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from memsid.plate_model import SensorDesign, build_parameter_matrix  # noqa: E402
from memsid.surrogate import fit_inverse  # noqa: E402

Z_GRID = np.linspace(12e-6, 18e-6, 9)
S_GRID = np.linspace(0.0, 100e6, 9)


@pytest.fixture(scope="session")
def design():
    return SensorDesign()


@pytest.fixture(scope="session")
def pm2(design):
    return build_parameter_matrix(design, Z_GRID, S_GRID, 4)


@pytest.fixture(scope="session")
def surrogate2(pm2):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_inverse(pm2)


@pytest.fixture(scope="session")
def surrogate1(design):
    pm = build_parameter_matrix(design, Z_GRID, [50e6], 3)
    return fit_inverse(pm)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
