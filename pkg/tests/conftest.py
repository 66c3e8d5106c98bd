"""Shared fixtures and the acceptance summary printed at the end of a run."""
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spectral_shift.domains import box_domain, square_atlas, square_domain
from spectral_shift.perturbation import TransformTEps, t_eps_certify

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def unit_box():
    """Unit square as a one-chart box with margin 0.25."""
    return box_domain()


@pytest.fixture(scope="session")
def atlas9():
    """Nine-chart atlas of the unit square."""
    return square_atlas()


@pytest.fixture(scope="session")
def square9(atlas9):
    """Unit square on the nine-chart atlas."""
    return square_domain(atlas9)


@pytest.fixture(scope="session")
def certified_transform(atlas9):
    """``T_eps`` on the nine-chart atlas with its certificate attached."""
    t = TransformTEps.for_atlas(atlas9)
    t_eps_certify(t)
    return t


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion.

    The returned callable prints the line immediately and keeps it for the
    terminal summary, so the verdict is visible even when output is captured.
    """

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
