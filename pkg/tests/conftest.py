from __future__ import annotations

import sys

import numpy as np
import pytest

from depin.obstacle_field import ObstacleField, ObstacleParams

PARAMS = dict(r0=0.1, r1=0.2, f=2.0)


@pytest.fixture
def field2():
    """Random field at rho = 2 with the reference obstacle parameters."""
    return ObstacleField(ObstacleParams(rho=2.0, seed=3, **PARAMS))


def empty_field(width: float = 2.0, rho: float = 1.0, f: float = 2.0) -> ObstacleField:
    return ObstacleField.from_centers(ObstacleParams(rho=rho, r0=0.1, r1=0.2, f=f),
                                      np.empty((0, 2)), width, y_min=-2.0, y_max=4.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
