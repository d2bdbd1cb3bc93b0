import numpy as np
import pytest

from asepkit import exact_oracle as eo
from asepkit.lattice_model import build_jump_law, tasep_law, torus_for


@pytest.fixture(scope="session")
def tasep8():
    law = tasep_law(1)
    return eo.build_generator_matrix(torus_for(law, (8,)), law)


@pytest.fixture(scope="session")
def tasep10():
    law = tasep_law(1)
    return eo.build_generator_matrix(torus_for(law, (10,)), law)


@pytest.fixture(scope="session")
def ssep8():
    law = build_jump_law(1, [((1,), 0.5), ((-1,), 0.5)])
    return eo.build_generator_matrix(torus_for(law, (8,)), law)


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, ok, detail)``; one line per criterion is printed at the end."""
    lines = request.config._acceptance_lines

    def report(k, ok, detail):
        line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((k, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
