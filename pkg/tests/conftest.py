import numpy as np
import pytest
from hypothesis import settings

from sacagen import numerics as nm

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def float64_mode():
    """Tests run in 64-bit unless they switch explicitly."""
    nm.set_default_dtype(np.float64)
    yield
    nm.set_default_dtype(np.float64)


def leaf(arr, grad=True):
    return nm.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
