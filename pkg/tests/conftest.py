import pytest
from hypothesis import HealthCheck, settings

from enantiocontrol.design import j011_system, j122_system, j233_system
from enantiocontrol.rotor import preset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py; printed once at the end of the run
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def carvone():
    return preset("carvone")


@pytest.fixture(scope="session")
def j011(carvone):
    return j011_system(carvone, ["w3_y"])


@pytest.fixture(scope="session")
def j011_models(j011):
    return j011.models()


@pytest.fixture(scope="session")
def j122_models(carvone):
    return j122_system(carvone).models()


@pytest.fixture(scope="session")
def j233_models(carvone):
    return j233_system(carvone).models()
