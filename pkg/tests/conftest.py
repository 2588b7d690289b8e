import numpy as np
import pytest

from gridmpc import DelayConfig, DeviceBounds, Line, Zone

# Two lines, six nodes, PTDF entries for the first three nodes follow the
# reference sign pattern; the slack sits outside the node list.
TABLE_PTDF = np.array([[0.36, 0.30, 0.32, 0.10, 0.05, 0.20],
                       [-0.27, 0.48, 0.14, 0.10, 0.20, 0.05]])
NODES = ("n1", "n2", "n3", "n4", "n5", "n6")

ACCEPTANCE = {}


def table_zone(limits=(76.0, 60.0)):
    lines = (Line("n1", "n4", limits[0], name="L1"), Line("n2", "n5", limits[1], name="L2"))
    return Zone(NODES, lines, ("n1",), ("n1", "n2"), "ext", TABLE_PTDF)


@pytest.fixture
def zone():
    return table_zone()


@pytest.fixture
def delays():
    return DelayConfig(2.0, 45.0, 1.0)


@pytest.fixture
def bounds():
    return DeviceBounds([0.0], [30.0], [-30.0], [30.0], [40.0, 40.0])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
