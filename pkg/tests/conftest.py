import sys

import pytest

from annulus_bubble_lab.geometry import AnnulusGeometry
from annulus_bubble_lab.radial import solve_u0


@pytest.fixture(scope="session")
def geom():
    return AnnulusGeometry(1.0, 2.0, 3)


@pytest.fixture(scope="session")
def u0(geom):
    return solve_u0(geom)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
