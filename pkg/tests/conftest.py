import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from switchbsde import (DriverSpec, LipschitzModulus, ModeSet, StateModelSpec, SwitchingCostSpec,
                        SwitchingProblem, TimeGrid, build_lattice, truncate_horizon)


def constant_drivers(values):
    evaluators = tuple((lambda t, x, y, z, c=c: np.full(y.shape[-1], c)) for c in values)
    return DriverSpec(evaluators, LipschitzModulus.zero(), max(abs(v) for v in values))


def constant_problem(values, cost, r, state=None, **kw):
    m = len(values)
    costs = SwitchingCostSpec.uniform(m, cost) if np.isscalar(cost) else SwitchingCostSpec.from_matrix(cost)
    return SwitchingProblem(ModeSet(m), constant_drivers(values), costs, r, state or StateModelSpec(), **kw)


def deterministic_lattice(r, bound, tol=1e-4, dt=0.01):
    T = truncate_horizon(r, bound, tol)
    return build_lattice(StateModelSpec(), TimeGrid.from_step(T, dt, r))


def coupled_problem(r=2.0, strength=0.1, c=(2.0, 1.0), cost=0.5):
    def make(i):
        return lambda t, x, y, z: c[i] + strength * math.exp(-t) * y[1 - i]
    drivers = DriverSpec((make(0), make(1)), LipschitzModulus.exponential(strength, 1.0), max(c), cross_y=True)
    return SwitchingProblem(ModeSet(2), drivers, SwitchingCostSpec.uniform(2, cost), r, StateModelSpec())


@pytest.fixture(scope="session")
def two_mode():
    p = constant_problem([2.0, 1.0], 0.5, 1.0)
    return p, deterministic_lattice(1.0, 2.0)


@pytest.fixture(scope="session")
def binomial_problem():
    state = StateModelSpec("recombining-binomial", volatility=1.0)

    def make(i, a):
        return lambda t, x, y, z: 1.0 + a * np.tanh(x[:, 0])
    drivers = DriverSpec((make(0, 1.0), make(1, -1.0)), LipschitzModulus.zero(), 2.0)
    p = SwitchingProblem(ModeSet(2), drivers, SwitchingCostSpec.uniform(2, 0.3), 1.0, state)
    lat = build_lattice(state, TimeGrid(3.0, 30, 1.0))
    return p, lat


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: criterion(number, passed, detail)."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number, passed, detail=""):
        lines[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
