import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from graspqd import primitives
from graspqd.mesh import decimate

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def fixture_meshes():
    """The five reference objects used by the transfer experiments."""
    return {
        "sphere": primitives.icosphere(0.03, 2),
        "box": primitives.box((0.05, 0.04, 0.06)),
        "cylinder": primitives.cylinder(0.025, 0.08),
        "torus": primitives.torus(0.035, 0.012),
        "decimated": decimate(primitives.icosphere(0.03, 4), 320),
    }


@pytest.fixture(scope="session")
def meshes():
    return fixture_meshes()


@pytest.fixture(scope="session")
def sphere(meshes):
    return meshes["sphere"]


@pytest.fixture(scope="session")
def box(meshes):
    return meshes["box"]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one acceptance line, print it, then assert it."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
