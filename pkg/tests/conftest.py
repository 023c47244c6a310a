from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pwflow.flow import make_spec
from pwflow.game import shapley_matrix
from pwflow.level import hexagon_itinerary, periodic_orbit_solve
from pwflow.section import build_section, transversal_section

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BETA = Fraction(618, 1000)


@pytest.fixture(scope="session")
def B_exact():
    return shapley_matrix(BETA, exact=True)


@pytest.fixture(scope="session")
def B_float():
    return shapley_matrix(BETA, exact=False)


@pytest.fixture(scope="session")
def spec_B(B_float):
    return make_spec(B_float, "best_response")


@pytest.fixture(scope="session")
def spec_B_exact(B_exact):
    return make_spec(B_exact, "best_response")


@pytest.fixture(scope="session")
def gamma(spec_B):
    return periodic_orbit_solve(hexagon_itinerary(spec_B, 1.0), spec_B, 1.0)


@pytest.fixture(scope="session")
def gamma_exact(spec_B_exact):
    return periodic_orbit_solve(hexagon_itinerary(spec_B_exact, 1), spec_B_exact, 1)


@pytest.fixture(scope="session")
def section_S(gamma, spec_B):
    return build_section(gamma, spec_B)


@pytest.fixture(scope="session")
def section_S_exact(gamma_exact, spec_B_exact):
    return build_section(gamma_exact, spec_B_exact)


@pytest.fixture(scope="session")
def section_Z(gamma, spec_B):
    return transversal_section(gamma, spec_B)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
