import functools
import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from miwlab.constructor import construct, construct_auto  # noqa: E402
from miwlab.states import energy_state  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@functools.lru_cache(maxsize=None)
def seq(ell, counts):
    return construct(energy_state(ell), counts)


@functools.lru_cache(maxsize=None)
def seq_auto(ell, N):
    return construct_auto(energy_state(ell), N)


@pytest.fixture
def cached_seq():
    return seq


@pytest.fixture
def cached_auto():
    return seq_auto


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
