from __future__ import annotations

import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from maskindex.datasets import gen_clouds, overlap_preset  # noqa: E402
from maskindex.index import BuildParams, build  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def gno():
    return gen_clouds(overlap_preset("GNO", 200, seed=0))


@pytest.fixture(scope="session")
def gmo():
    return gen_clouds(overlap_preset("GMO", 200, seed=0))


@pytest.fixture(scope="session")
def gno_index(gno):
    return build(gno, BuildParams(16, 8, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
