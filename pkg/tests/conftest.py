import sys

import numpy as np
import pytest

from lvmorph.aha import partition_17
from lvmorph.mesh import icosphere
from lvmorph.phantom import PhantomSpec, generate_phantom
from lvmorph.study import phantom_landmarks


@pytest.fixture(scope="session")
def sphere4():
    return icosphere(4, 1.0)


@pytest.fixture(scope="session")
def lv_phantom():
    spec = PhantomSpec("half_ellipsoid", (14.0, 14.0, 28.0), bump_count=30,
                       bump_amplitude=1.0, bump_wavelength=8.0, seed=3, subdivisions=5)
    mesh = generate_phantom(spec)
    landmarks = phantom_landmarks(spec.radii)
    return mesh, landmarks, partition_17(mesh, landmarks)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
