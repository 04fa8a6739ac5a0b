import numpy as np
import pytest

from spfclust.simulate import SimSpec, simulate

_ACCEPTANCE = []


def record_criterion(number, name, passed, detail=""):
    line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {name}" + (f" ({detail})" if detail else "")
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_sim():
    return simulate(SimSpec(n_sites=120, n_times=120, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
