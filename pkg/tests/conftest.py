import importlib

import pytest


def _kernel(name):
    mod = "robotsync.netsim._portcore_py" if name == "python" else "robotsync.netsim._portcore"
    try:
        return importlib.import_module(mod).PortCore
    except ImportError:
        pytest.skip(f"{name} kernel not built")


@pytest.fixture(scope="session", params=["python", "cython"])
def PortCore(request):
    """Each egress-port kernel in turn."""
    return _kernel(request.param)


@pytest.fixture(scope="session")
def both_kernels():
    return _kernel("python"), _kernel("cython")


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
