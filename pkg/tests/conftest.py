import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mgmc.system import SystemConfig, generate_channels

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def desk_cfg():
    """Small instance that solves in a few seconds for every criterion."""
    return SystemConfig(M=2, N=4, G=3, P_T=10.0)


@pytest.fixture
def desk_channels(desk_cfg):
    return generate_channels(desk_cfg, 3)


def random_precoder(rng, M, G, power=1.0):
    W = rng.standard_normal((M, G)) + 1j * rng.standard_normal((M, G))
    return W * np.sqrt(power / np.sum(np.abs(W) ** 2))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
