import math

import numpy as np
import pytest

from l1margin.l1ctrl import ControllerConfig, UncertaintySets
from l1margin.scenario_file import bundled_path, load_scenario
from l1margin.simulate import Scenario, Signal

A_M = np.array([[0.0, 1.0], [-1.0, -1.4]])
B = np.array([0.0, 1.0])
C_OUT = np.array([1.0, 0.0])
THETA = np.array([2.0, 2.0])


def arm_sets():
    return UncertaintySets([[-10, 10], [-10, 10]], 10.0, 1000.0, (0.2, 5.0), (0.1, 50.0), math.pi)


def arm_config(k=60.0, gamma_c=1e4):
    return ControllerConfig(A_M, B, C_OUT, k, gamma_c, arm_sets())


def arm_scenario(**kw):
    base = dict(sigma=Signal.sinusoid(1.0, math.pi), r=Signal.sinusoid(1.0, math.pi, math.pi / 2),
                h=1e-5, t_end=10.0)
    base.update(kw)
    cfg = base.pop("cfg", None) or arm_config()
    return Scenario(cfg, THETA, 1.0, **base)


@pytest.fixture(scope="session")
def desk():
    """Bundled robot-arm scenario at the desk profile."""
    return load_scenario(bundled_path(), "desk").build()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(key, passed, detail):
    ACCEPTANCE_LINES[key] = f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=str):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
