import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from placechange import synthgen  # noqa: E402


@pytest.fixture(scope="session")
def small_synth():
    cfg = synthgen.SynthConfig(seed=1, n_places=3, frames_per_place=8, features_per_frame=30,
                               descriptor_dim=8, n_queries=6, experience_size=500,
                               nuisance_features_per_query=36)
    return synthgen.generate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; printed again in the terminal summary."""

    def record(name, ok, detail=""):
        line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
