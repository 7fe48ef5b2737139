import math

import numpy as np
import pytest

from switchbsde import (ModeSet, StateModelSpec, SwitchingCostSpec, SwitchingProblem, TimeGrid, build_lattice,
                        solve_bsde, solve_reflected)
from switchbsde.registry import build_costs, build_drivers
from switchbsde.switching import (EXACT, ITERATED, FeedbackStrategy, Strategy, cost_process, eval_strategy,
                                  oracle_value, random_strategies, representation_check, state_process)

from conftest import constant_problem, coupled_problem, deterministic_lattice
from oracles import enumerate_best

RELAY_F = (lambda t: 3 - 3 * math.exp(-t), lambda t: 1 + 1.5 * math.exp(-t), lambda t: 0.0)
RELAY_G = [[0, 0.3, 0.4], [0.3, 0, 0.3], [0.4, 0.3, 0]]

# best root values per start mode, by switch budget 0..3, on a 24-step grid over [0, 6]
RELAY_BEST = [
    [1.3941680720177225, 1.7911100477839645, 0.0],
    [1.4911100477839645, 2.1182528033266705, 1.4911100477839645],
    [1.8182528033266705, 2.1182528033266705, 1.8182528033266705],
    [1.8182528033266705, 2.1182528033266705, 1.8182528033266705],
]


def relay_problem():
    drivers = build_drivers({"kind": "time-exponential", "values": [3, 1, 0], "amplitudes": [-3, 1.5, 0],
                             "rate": 1.0}, 3)
    costs = build_costs({"kind": "matrix", "matrix": RELAY_G}, 3)
    return SwitchingProblem(ModeSet(3), drivers, costs, 1.0, StateModelSpec())


@pytest.fixture(scope="module")
def relay_coarse():
    return relay_problem(), build_lattice(StateModelSpec(), TimeGrid(6.0, 24, 1.0))


def test_cost_process_single_switch():
    p = constant_problem([2.0, 1.0], 0.5, 1.0)
    lat = build_lattice(StateModelSpec(), TimeGrid(3.0, 300, 1.0))
    cp = cost_process(Strategy(0, 2, ((100, 1),)), p, lat)
    assert cp.total == pytest.approx(0.5 * math.exp(-1), rel=1e-12)
    assert cp.A[99][0] == 0.0 and cp.A[100][0] == cp.total


def test_cost_process_two_switches_unit_cost():
    p = constant_problem([2.0, 1.0], 1.0, 1.0)
    lat = build_lattice(StateModelSpec(), TimeGrid(3.0, 300, 1.0))
    cp = cost_process(Strategy(0, 1, ((100, 2), (200, 1))), p, lat)
    assert cp.total == pytest.approx(math.exp(-1) + math.exp(-2), rel=1e-12)
    assert all(np.all(b >= a) for a, b in zip(cp.A, cp.A[1:]))


def test_state_process_is_right_continuous():
    s = Strategy(2, 1, ((5, 2), (9, 3)))
    assert [state_process(s, k) for k in (2, 4, 5, 8, 9, 20)] == [1, 1, 2, 2, 3, 3]
    assert s.mode_before(5) == 1 and s.mode_before(9) == 2
    with pytest.raises(ValueError, match="precedes"):
        s.state(1)


@pytest.mark.parametrize("switches", [((3, 1),), ((3, 2), (3, 1)), ((4, 2), (2, 1))])
def test_malformed_strategies_rejected(switches):
    with pytest.raises(ValueError):
        Strategy(0, 1, switches)


def test_strategy_records_roundtrip():
    s = Strategy(1, 2, ((4, 1), (6, 3)))
    assert Strategy.from_records(s.to_records()) == s
    with pytest.raises(ValueError, match="problem has 2"):
        s.check_against(2, 10)


def test_feedback_table_validation():
    with pytest.raises(ValueError):
        FeedbackStrategy(0, 1, [np.array([[0, 2]])])


def test_never_switching_equals_plain_bsde(two_mode):
    p, lat = two_mode
    ev = eval_strategy(Strategy(0, 2), p, lat)
    plain = solve_bsde(p, lat)
    assert all(np.array_equal(u, y[1]) for u, y in zip(ev.U, plain.Y))
    assert all(np.all(a == 0) for a in ev.A)


def test_immediate_switch_value(two_mode):
    p, lat = two_mode
    ev = eval_strategy(Strategy(0, 2, ((0, 1),)), p, lat)
    stay = eval_strategy(Strategy(0, 1), p, lat)
    assert ev.u0 == pytest.approx(stay.u0 - 0.5, abs=1e-14)
    assert ev.u0 == pytest.approx(1.5, abs=1e-3)


def test_delayed_switch_converges_to_closed_form():
    p = constant_problem([2.0, 1.0], 0.5, 1.0)
    exact = 1 + 0.5 * math.exp(-1)  # run mode 2 on [0,1), then mode 1, cost 0.5 e^{-1}
    errors = []
    for steps_per_unit in (50, 100, 200):
        T = 12.0
        lat = build_lattice(StateModelSpec(), TimeGrid(T, int(T * steps_per_unit), 1.0))
        ev = eval_strategy(Strategy(0, 2, ((steps_per_unit, 1),)), p, lat)
        errors.append(abs(ev.u0 - exact))
    assert errors[-1] < 2e-3
    assert errors[0] > errors[1] > errors[2]


def test_pre_switch_u_and_cost_identity(two_mode):
    p, lat = two_mode
    s = Strategy(0, 2, ((30, 1), (60, 2)))
    ev = eval_strategy(s, p, lat)
    # U before a switch is the post-switch continuation less the (undiscounted) cost
    stay1 = eval_strategy(Strategy(30, 1, ((60, 2),)), p, lat)
    assert ev.U[30][0] == pytest.approx(stay1.u0 - 0.5, abs=1e-14)


def test_oracle_matches_enumeration(relay_coarse):
    p, lat = relay_coarse
    res = oracle_value(p, lat, 1, switch_budget=3)
    assert res.regime == EXACT
    assert np.allclose(res.values0, RELAY_BEST, atol=1e-12)
    assert res.stabilized and res.stabilization_budget == 2


def test_enumeration_oracle_reproduces_frozen_values():
    for budget in (0, 1, 2):
        for mode in range(3):
            got = enumerate_best(RELAY_F, RELAY_G, 1.0, 0.25, 24, mode, budget)
            assert got == pytest.approx(RELAY_BEST[budget][mode], abs=1e-12)


def test_oracle_monotone_in_budget(relay_coarse):
    p, lat = relay_coarse
    v = oracle_value(p, lat, 2, switch_budget=3).values0
    assert np.all(np.diff(v, axis=0) >= -1e-15)


def test_oracle_two_mode_constant(two_mode):
    p, lat = two_mode
    res = oracle_value(p, lat, 2, switch_budget=1)
    y = solve_reflected(p, lat).Y[0][:, 0]
    assert res.values0[-1] == pytest.approx(y, abs=1e-12)
    assert res.values0[-1][1] == pytest.approx(1.5, abs=1e-3)


def test_expensive_switching_never_switches():
    p = constant_problem([2.0, 1.0], 50.0, 1.0)
    lat = deterministic_lattice(1.0, 2.0, dt=0.05)
    res = oracle_value(p, lat, 2)
    assert res.strategy.switch_count() == 0
    assert res.stabilization_budget == 0


def test_single_mode_budget_zero():
    p = constant_problem([1.0], 0.0, 0.5)
    lat = deterministic_lattice(0.5, 1.0, dt=0.05)
    res = oracle_value(p, lat)
    assert res.budget == 1 and res.stabilization_budget == 0


def test_oracle_rejects_bad_mode(two_mode):
    p, lat = two_mode
    with pytest.raises(ValueError, match="outside"):
        oracle_value(p, lat, 3)


def test_coupled_oracle_is_iterated():
    p = coupled_problem()
    lat = deterministic_lattice(2.0, 2.0, dt=0.02)
    res = oracle_value(p, lat, 1)
    assert res.regime == ITERATED and res.passes > 1


def test_representation_on_relay(relay_coarse):
    p, lat = relay_coarse
    sol = solve_reflected(p, lat)
    strategies = random_strategies(p, lat, 30, seed=4)
    rep = representation_check(p, lat, sol, strategies, switch_budget=3)
    assert rep.passed, rep.to_dict()
    assert rep.strategies_checked == 30


def test_extracted_strategy_attains_value(relay_coarse):
    p, lat = relay_coarse
    res = oracle_value(p, lat, 1, switch_budget=3)
    ev = eval_strategy(res.strategy, p, lat)
    assert ev.u0 == pytest.approx(res.values0[-1][0], abs=1e-12)


def test_random_strategies_are_seeded_and_valid(relay_coarse):
    p, lat = relay_coarse
    a = random_strategies(p, lat, 10, seed=1)
    b = random_strategies(p, lat, 10, seed=1)
    assert [type(x) for x in a] == [type(x) for x in b]
    for x in a:
        if isinstance(x, Strategy):
            x.check_against(3, lat.steps)
            assert all(np.all(q >= w) for w, q in zip(cost_process(x, p, lat).A, cost_process(x, p, lat).A[1:]))


def test_binomial_representation(binomial_problem):
    p, lat = binomial_problem
    sol = solve_reflected(p, lat)
    rep = representation_check(p, lat, sol, random_strategies(p, lat, 10, seed=2), switch_budget=12)
    assert rep.dominated and rep.oracle_ok and rep.attained, rep.to_dict()
