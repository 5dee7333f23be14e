import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dipv.geometry import PointCloud, center_and_scale

settings.register_profile(
    "dipv", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("dipv")


def random_cloud(rng, n=64, normalize=True):
    cloud = PointCloud(rng.normal(size=(n, 3)))
    return center_and_scale(cloud) if normalize else cloud


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ---------------------------------------------------------------- acceptance
# test_acceptance.py records one line per criterion here; the lines are
# printed in the terminal summary so a plain `pytest` run shows them.

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    def _record(number: int, title: str, passed: bool, detail: str):
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES[number] = f"[{status}] C{number:<2} {title}: {detail}"
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
