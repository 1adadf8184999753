"""Shared network fixtures plus the acceptance summary block."""

import re
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flexagg.network import Bus, DeviceConnection, Line, NetworkModel


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            match = re.search(r"test_criterion_(\d+)_(\w+)", nodeid)
            if not match:
                continue
            verdict = "PASS" if outcome == "passed" else "FAIL"
            rows.append((int(match.group(1)), match.group(2), verdict))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, slug, verdict in sorted(rows):
        label = slug.replace("_", " ")
        terminalreporter.write_line(f"criterion {number} [{verdict}] {label}")


@pytest.fixture
def two_bus():
    """Single-phase two-bus feeder with one wye connection point."""
    yblock = np.zeros((3, 3), dtype=complex)
    yblock[0, 0] = 1.0 / (0.01 + 0.01j)
    return NetworkModel(
        buses=[Bus("sub", ("a",)), Bus("b1", ("a",))],
        lines=[Line("sub", "b1", ("a",), yblock)],
        substation="sub",
        v0=np.array([1.0 + 0.0j]),
        connections=[DeviceConnection("cw", "b1", "wye", ("a",))],
    )


@pytest.fixture
def three_phase():
    """Three-phase two-bus feeder with wye and delta connection points."""
    z_self = 0.02 + 0.04j
    z_mut = 0.005 + 0.01j
    z = np.full((3, 3), z_mut, dtype=complex)
    np.fill_diagonal(z, z_self)
    y = np.linalg.inv(z)
    v0 = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])
    return NetworkModel(
        buses=[Bus("sub", ("a", "b", "c")), Bus("b1", ("a", "b", "c"))],
        lines=[Line("sub", "b1", ("a", "b", "c"), y)],
        substation="sub",
        v0=v0,
        connections=[
            DeviceConnection("cw", "b1", "wye", ("a", "b", "c")),
            DeviceConnection("cd", "b1", "delta", ("ab",)),
        ],
    )
