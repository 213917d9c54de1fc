import time

import pytest

from tactilesense.config import ExperimentConfig
from tactilesense.phantom import InclusionSpec, PhantomSpec, SensorConfig

ACCEPTANCE_LINES: list[str] = []

EXTENT = (165.1, 215.9)


@pytest.fixture(scope="session")
def default_config() -> ExperimentConfig:
    return ExperimentConfig(seed=0).validate()


@pytest.fixture(scope="session")
def trained(default_config):
    """Agent trained once with the default reduced-profile config."""
    from tactilesense.pipeline import train_agent
    t0 = time.perf_counter()
    result = train_agent(default_config)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def model(trained):
    return trained[0].model


@pytest.fixture(scope="session")
def surface(default_config):
    from tactilesense.pipeline import calibrate
    return calibrate(default_config)[0]


@pytest.fixture
def quiet_cfg() -> SensorConfig:
    """Reduced profile with every noise source off."""
    return SensorConfig.reduced(force_noise_sd=0.0, intensity_noise_sd=0.0, pos_noise_bound=0.0)


@pytest.fixture
def soft() -> InclusionSpec:
    return InclusionSpec((80.0, 100.0, -6.0), 15.3, 94.4)


@pytest.fixture
def hard() -> InclusionSpec:
    return InclusionSpec((80.0, 100.0, -6.0), 18.9, 628.0)


def phantom_with(*incs, layer=6.0) -> PhantomSpec:
    return PhantomSpec(EXTENT, inclusion_layer_depth=layer, inclusions=tuple(incs))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
