import numpy as np
import pytest

from cmakit.geometry import build_reference_forms
from cmakit.grid import GridSpec, build_domain, inward_band


def r2(z):
    return np.sum(np.abs(z) ** 2, axis=-1)


@pytest.fixture(scope="session")
def disc33():
    """n = 1, unit disc (rho = log(1+|z|^2) < log 2), N = 33."""
    return build_domain(GridSpec(1, 33, 1.5))


@pytest.fixture(scope="session")
def disc65():
    return build_domain(GridSpec(1, 65, 1.5))


@pytest.fixture(scope="session")
def ball17():
    """n = 2, unit ball, N = 17."""
    return build_domain(GridSpec(2, 17, 1.5))


@pytest.fixture(scope="session")
def forms33(disc33):
    return build_reference_forms(disc33, 1.0)


@pytest.fixture(scope="session")
def inward33():
    spec = GridSpec(1, 33, 1.5)
    return build_domain(spec, band=inward_band(spec))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = []


def report_criterion(number, title, passed, detail):
    """Record and print one acceptance verdict line."""
    line = f"{'PASS' if passed else 'FAIL'} A{number:02d} {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
