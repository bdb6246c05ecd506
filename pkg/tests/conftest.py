import numpy as np
import pytest

from westervelt_mh.medium import MediumParams
from westervelt_mh.mesh import generate_disk_mesh, generate_rect_mesh
from westervelt_mh.sources import RegularizedDirac, SourceComponent, SourceSpec

WATER = dict(c=1480.0, b=1e-9, BA=5.0)
OMEGA_100K = 2 * np.pi * 1e5


@pytest.fixture(scope="session")
def unit_square():
    return generate_rect_mesh(0, 0, 1, 1, 6, 6)


@pytest.fixture(scope="session")
def small_disk():
    return generate_disk_mesh(0.05, (0.0, 0.0), 0.004)


@pytest.fixture(scope="session")
def water():
    return MediumParams.uniform(rho0=1000.0, omega=OMEGA_100K, **WATER)


def monopole(amplitude=1.0, zeta=5e-4, m=1):
    return SourceSpec((SourceComponent(m, RegularizedDirac((0.0, 0.0), zeta), amplitude),))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
