import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=100,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def ring_image(shape, center, radius, fg=1.0, bg=0.0):
    """Anti-aliased filled disk, gray."""
    yy, xx = np.mgrid[: shape[0], : shape[1]].astype(float)
    rho = np.hypot(yy - center[0], xx - center[1])
    alpha = np.clip(radius + 0.5 - rho, 0.0, 1.0)
    return bg + (fg - bg) * alpha


@pytest.fixture
def disk_image():
    return ring_image((120, 120), (60, 60), 20)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
