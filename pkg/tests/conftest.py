import warnings

import pytest

from atomcavity.config import RunConfig
from atomcavity.ensemble import TransmissionTable


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Callable recording one PASS/FAIL line for the end-of-run summary."""
    lines = request.config._acceptance_lines

    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip()
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cfg():
    return RunConfig.load(use_env=False)


@pytest.fixture(scope="session")
def geom(cfg):
    return cfg.geometry()


@pytest.fixture(scope="session")
def atom(cfg):
    return cfg.atom()


@pytest.fixture(scope="session")
def kappa(cfg):
    return cfg.kappa()


@pytest.fixture(scope="session")
def drive(cfg):
    return cfg.drive()


@pytest.fixture(scope="session")
def table(drive, kappa, atom):
    return TransmissionTable(drive, kappa, atom.gamma)


@pytest.fixture(autouse=True)
def _quiet_step_warning():
    # large per-step excitation near the mode centre is expected at default settings
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="excitation probability per step", category=RuntimeWarning)
        yield
