import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchbsde import (BINOMIAL, DETERMINISTIC, TRINOMIAL, StateModelSpec, TimeGrid, build_lattice,
                        cond_expect, cond_expect_with_increment, truncate_horizon)


def test_truncate_horizon_formula():
    T = truncate_horizon(0.5, 1.0, 1e-4)
    assert T == pytest.approx(math.log(1.0 / (0.5 * 1e-4)) / 0.5)
    assert math.exp(-0.5 * T) * 1.0 / 0.5 == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        truncate_horizon(0.0, 1.0, 1e-4)


def test_grid_from_step_never_exceeds_dt():
    g = TimeGrid.from_step(1.0, 0.3, 1.0)
    assert g.steps == 4 and g.dt <= 0.3
    assert TimeGrid.from_step(1.0, 0.25, 1.0).steps == 4


@pytest.mark.parametrize("kind,width", [(DETERMINISTIC, 0), (BINOMIAL, 1), (TRINOMIAL, 2)])
def test_node_counts_and_marginals(kind, width):
    lat = build_lattice(StateModelSpec(kind, volatility=0.0 if kind == DETERMINISTIC else 1.0),
                        TimeGrid(1.0, 6, 1.0))
    assert lat.node_counts == tuple(width * k + 1 for k in range(7))
    for w in lat.marginals:
        assert w.sum() == pytest.approx(1.0, abs=1e-14)


def test_deterministic_increments_vanish():
    lat = build_lattice(StateModelSpec(drift=2.0), TimeGrid(1.0, 4, 1.0))
    assert cond_expect_with_increment(lat, 0, np.ones((1, 1))) == pytest.approx(0.0)
    assert lat.states[4][0, 0] == pytest.approx(2.0)


@pytest.mark.parametrize("kind", [BINOMIAL, TRINOMIAL])
def test_brownian_moments(kind):
    lat = build_lattice(StateModelSpec(kind, volatility=1.0), TimeGrid(1.0, 10, 1.0))
    x = lat.states[-1][:, 0]
    w = lat.marginals[-1]
    assert w @ x == pytest.approx(0.0, abs=1e-12)
    assert w @ x**2 == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind", [BINOMIAL, TRINOMIAL])
def test_martingale_integrand_recovers_linear_function(kind):
    lat = build_lattice(StateModelSpec(kind, volatility=1.0), TimeGrid(1.0, 8, 1.0))
    k = 3
    vals = 2.0 * lat.states[k + 1][:, 0] + 1.0
    np.testing.assert_allclose(cond_expect(lat, k, vals), 2.0 * lat.states[k][:, 0] + 1.0, atol=1e-12)
    np.testing.assert_allclose(cond_expect_with_increment(lat, k, vals), 2.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.sampled_from([BINOMIAL, TRINOMIAL]))
def test_tower_property(values, kind):
    lat = build_lattice(StateModelSpec(kind, volatility=0.7), TimeGrid(1.0, 4, 1.0))
    rng = np.random.default_rng(abs(hash(tuple(values))) % 2**32)
    terminal = rng.normal(size=lat.node_counts[-1]) * values[0]
    v = terminal
    for k in range(lat.steps - 1, -1, -1):
        v = cond_expect(lat, k, v)
    assert v[0] == pytest.approx(lat.marginals[-1] @ terminal, abs=1e-10)


def test_geometric_state_is_positive():
    lat = build_lattice(StateModelSpec(BINOMIAL, x0=(1.0,), volatility=0.5, geometric=True), TimeGrid(2.0, 20, 1.0))
    assert min(s.min() for s in lat.states) > 0


def test_negative_volatility_rejected():
    with pytest.raises(ValueError, match="volatility"):
        build_lattice(StateModelSpec(BINOMIAL, volatility=lambda t: -1.0), TimeGrid(1.0, 2, 1.0))


def test_field_shape_checked():
    lat = build_lattice(StateModelSpec(BINOMIAL, volatility=1.0), TimeGrid(1.0, 3, 1.0))
    with pytest.raises(ValueError):
        cond_expect(lat, 0, np.zeros(3))
    with pytest.raises(IndexError):
        cond_expect(lat, 3, np.zeros(5))


def test_forward_conditional_of_path_independent_increments():
    lat = build_lattice(StateModelSpec(TRINOMIAL, volatility=1.0), TimeGrid(1.0, 5, 1.0))
    incs = [np.full(n, 0.1) for n in lat.node_counts[:-1]]
    acc = lat.forward_conditional(incs)
    for k, a in enumerate(acc):
        np.testing.assert_allclose(a, 0.1 * k, atol=1e-14)
