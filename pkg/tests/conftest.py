import numpy as np
import pytest
from hypothesis import settings

from umbir.media import ArrayGeometry, ImageGrid, Layer, LayeredMedium
from umbir.pulse import PulseSpec
from umbir.system import BeamParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_medium():
    return LayeredMedium((
        Layer.from_density(0.02, 1500.0, 2e-6, 1000.0, "water"),
        Layer.from_density(0.04, 2600.0, 30e-6, 2000.0, "solid"),
    ))


@pytest.fixture
def small_geometry():
    return ArrayGeometry.linear_array(0.03, np.radians(10.0), 0.01, 0.01, 4, 1500.0, 2e-6)


@pytest.fixture
def small_grid():
    return ImageGrid(12, 8, 0.004, (0.028, 0.0))


@pytest.fixture
def small_spec():
    return PulseSpec(100e3, 40e-6, 2e6, 300)


@pytest.fixture
def small_beam():
    return BeamParams(4.0, np.radians(10.0))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
