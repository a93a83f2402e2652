import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from msdem.core import OceanField, PhysParams  # noqa: E402


def _uniform(ux, uy=0.0, curl=0.0, name="uniform"):
    return OceanField(
        lambda x, y: (np.full(np.shape(x), ux), np.full(np.shape(x), uy)),
        lambda x, y: np.full(np.shape(x), curl),
        name,
    )


@pytest.fixture
def still_ocean():
    return _uniform(0.0)


@pytest.fixture
def uniform_ocean():
    return _uniform(0.3)


@pytest.fixture
def params():
    return PhysParams()


@pytest.fixture
def no_drag():
    return PhysParams(drag=False)


def uniform_ocean_field(ux, uy=0.0, curl=0.0):
    return _uniform(ux, uy, curl)


# --- acceptance report ------------------------------------------------------

_REPORT = []


@pytest.fixture
def verdict():
    """Record one ``CRITERION n: PASS|FAIL`` line and return the pass flag."""
    def record(n, ok, detail=""):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        _REPORT.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_REPORT, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
