import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from drcate import Dataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_linear_data(n=300, p=4, seed=0, q=None):
    """Small confounded dataset with a linear CATE in the first modifier."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    from scipy.special import ndtr
    t = (rng.random(n) < ndtr(0.4 * x[:, 0] - 0.3 * x[:, 1])).astype(int)
    y = (0.5 + 0.8 * x[:, 0]) * t + x @ np.linspace(0.5, -0.5, p) + rng.standard_normal(n)
    mods = x if q is None else x[:, : q - 1]
    return Dataset.from_arrays(y, t, x, mods)


@pytest.fixture
def linear_data():
    return make_linear_data()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
