import numpy as np
import pytest

from asi.problems import RandomSystemSpec, make_projector, make_random_system


@pytest.fixture(scope="session")
def phantom_system():
    # 64x64 image, 90 angles, 95 detectors: the desk-scale tomography problem
    return make_projector(64)


@pytest.fixture
def small_system():
    return make_random_system(RandomSystemSpec(20, 10, 3, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def emit(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
