import datetime as dt

import numpy as np
import pytest

from floodlag.kernels import available_backends
from floodlag.synth import DgpConfig, generate_world

ACCEPTANCE_LINES = []


def record_acceptance(number, title, ok, detail=""):
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def small_world():
    """A quick world: 30 ZIPs, four events, 2005-2012."""
    return generate_world(DgpConfig(seed=11, n_zips=30, n_events=4, study_years=(2005, 2012)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def d(text):
    return dt.date.fromisoformat(text)
