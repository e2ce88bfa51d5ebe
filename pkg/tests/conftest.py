import pytest

from modalspdc.config import default_config_path, parse_config
from modalspdc.jsa import PumpEnvelope, PumpExcitation, build_jsa
from modalspdc.phasematch import ModeSet

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def config():
    return parse_config(default_config_path())


@pytest.fixture(scope="session")
def geometry(config):
    return config.geometry()


@pytest.fixture(scope="session")
def modes(config):
    return ModeSet(config.geometry(), **config.modeset_kwargs())


@pytest.fixture(scope="session")
def jsa00(modes):
    return build_jsa(PumpExcitation.single((0, 0)), PumpEnvelope(), modes)


@pytest.fixture
def report(capsys):
    """Print one acceptance line immediately and again in the session summary."""
    def emit(line):
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
