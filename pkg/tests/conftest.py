import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from echobeam import phantom
from echobeam.rxpipeline import ApodizationWindow

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small():
    """Small-test geometry, grid, aperture-matched pulse and speckle recipe."""
    geom = phantom.small_geometry()
    grid = phantom.small_grid()
    return geom, grid, phantom.PulseSpec.for_aperture(geom), phantom.small_speckle(grid)


@pytest.fixture(scope="session")
def hann(small):
    return ApodizationWindow.make("HANN", small[0].element_count)


@pytest.fixture(scope="session")
def sla_frame(small):
    geom, grid, pulse, speckle = small
    fld = phantom.make_speckle_phantom(speckle.density, speckle.depth_window, speckle.sector, 5)
    return phantom.simulate_channel_data(fld, geom, grid, pulse)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_ARCH = {"depth": 2, "base_channels": 4}


@pytest.fixture(scope="session")
def tiny_dataset():
    from echobeam.training import DatasetConfig
    return DatasetConfig(n_train=3, n_val=2, n_test=2, n_cyst=2)


@pytest.fixture(scope="session")
def tiny_split(tiny_dataset):
    from echobeam.training import build_dataset
    return build_dataset(tiny_dataset)


@pytest.fixture(scope="session")
def tiny_cell(tiny_dataset):
    """Factory for small, fast cells on the tiny dataset."""
    from echobeam.training import CellConfig, TrainConfig

    def make(name="10-MLA", **kw):
        opts = dict(stage1_iterations=20, stage2_iterations=10, validation_interval=5,
                    architecture=dict(TINY_ARCH))
        opts.update(kw)
        return CellConfig(name, tiny_dataset, TrainConfig(**opts))
    return make


# acceptance summary: one PASS/FAIL line per criterion at the end of the run
_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str) -> None:
        lines[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[number])
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
