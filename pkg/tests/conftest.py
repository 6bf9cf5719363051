import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rabi():
    from qtraj.presets import two_level_model

    return two_level_model(gamma=1.0, rabi=3.0)


@pytest.fixture
def decay():
    from qtraj.presets import two_level_model

    return two_level_model(gamma=1.0)


@pytest.fixture
def excited():
    return np.array([1.0, 0.0], dtype=np.complex128)


@pytest.fixture
def ground():
    return np.array([0.0, 1.0], dtype=np.complex128)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
