import math

import numpy as np
import pytest

from switchbsde import (PENALIZATION, PROJECTION, StateModelSpec, TimeGrid, build_lattice, obstacle_violation,
                        penalty_decay_check, skorokhod_residual, solve_bsde, solve_penalized, solve_reflected)
from switchbsde.reflect import ProjectionError, penalized_driver, project_modes

from conftest import constant_problem, coupled_problem, deterministic_lattice

# Y0 of the penalized ODE y' = r y - f - n sum_j (y_i - y_j + g)^-, f = (2, 1), g = 0.5, r = 1,
# n = 64, integrated backward from 0 at T = log(2 / 1e-4) with scipy's Radau (rtol 1e-10).
PENALIZED_ODE_Y0 = (1.9998999999998488, 1.492207692307541)
ODE_HORIZON = math.log(2.0 / 1e-4)


@pytest.fixture(scope="module")
def penalized_two_mode():
    p = constant_problem([2.0, 1.0], 0.5, 1.0)
    lat = build_lattice(StateModelSpec(), TimeGrid.from_step(ODE_HORIZON, 0.9 / 129, 1.0))
    return p, lat, solve_reflected(p, lat, PENALIZATION)


def test_penalized_driver_formula():
    p = constant_problem([2.0, 1.0], 0.5, 1.0)
    assert penalized_driver(p, 4, 1, 0.0, [0.0], np.array([1.0, 1.6]), 0.0) == pytest.approx(2.4)
    assert penalized_driver(p, 4, 1, 0.0, [0.0], np.array([1.0, 1.2]), 0.0) == pytest.approx(2.0)
    assert penalized_driver(p, 0, 2, 0.0, [0.0], np.array([5.0, 0.0]), 0.0) == 1.0


def test_single_mode_penalization_is_plain_bsde():
    p = constant_problem([1.0], 0.0, 0.5)
    lat = deterministic_lattice(0.5, 1.0)
    sol, level = solve_penalized(p, lat, 8)
    plain = solve_bsde(p, lat)
    assert all(np.array_equal(a, b) for a, b in zip(sol.Y, plain.Y))
    assert level.violation == 0.0


def test_zero_penalty_is_decoupled(two_mode):
    p, lat = two_mode
    sol, _ = solve_penalized(p, lat, 0)
    np.testing.assert_allclose(sol.y0, [2.0, 1.0], atol=1e-3)


def test_penalization_matches_ode_oracle(penalized_two_mode):
    _, _, sol = penalized_two_mode
    np.testing.assert_allclose(sol.y0, PENALIZED_ODE_Y0, atol=5e-2)
    np.testing.assert_allclose(sol.y0, PENALIZED_ODE_Y0, atol=5e-3)


def test_frozen_ode_values_reproduce():
    pytest.importorskip("scipy")
    from oracles import penalized_ode_y0
    y = penalized_ode_y0([lambda t: 2.0, lambda t: 1.0], [[0.0, 0.5], [0.5, 0.0]], 1.0, 64, ODE_HORIZON)
    np.testing.assert_allclose(y, PENALIZED_ODE_Y0, atol=1e-8)


def test_penalty_diagnostics(penalized_two_mode):
    p, lat, sol = penalized_two_mode
    levels = sol.penalty.levels
    assert [lv.n for lv in levels] == [1, 2, 4, 8, 16, 32, 64]
    assert penalty_decay_check(sol.penalty).passed
    assert all(lv.exclusivity == 0.0 for lv in levels)
    assert all(lv.monotone_gap <= 1e-10 for lv in levels[1:])
    assert all(lv.balance_residual < 1e-12 for lv in levels)
    skor = [lv.skorokhod[1] for lv in levels]
    assert all(b <= a for a, b in zip(skor, skor[1:]))
    assert skor[-1] <= 1e-2
    sups = [lv.sup_violation for lv in levels]
    assert sups[-1] < sups[0] and sups[-1] <= 5e-2


def test_penalization_monotone_in_n_pointwise(two_mode):
    p, _ = two_mode
    lat = build_lattice(StateModelSpec(), TimeGrid.from_step(6.0, 0.9 / 33, 1.0))
    prev = None
    for n in (1, 2, 4, 8, 16):
        sol, _ = solve_penalized(p, lat, n)
        if prev is not None:
            assert all(np.all(a <= b + 1e-10) for a, b in zip(prev.Y, sol.Y))
        prev = sol


def test_projection_two_mode(two_mode):
    p, lat = two_mode
    sol = solve_reflected(p, lat, PROJECTION)
    np.testing.assert_allclose(sol.y0, [2.0, 1.5], atol=1e-2)
    assert obstacle_violation(sol, p, lat) <= 1e-12
    assert skorokhod_residual(sol, p, lat).max() <= 1e-10
    K = [k[:, 0] for k in sol.K(lat)]
    assert K[0][1] == 0.0
    # the obstacle stops binding only near the truncation horizon, where both values fall to 0
    half = len(K) // 2
    assert all(b[1] > a[1] for a, b in zip(K[:half], K[1:half]))
    assert max(abs(k[0]) for k in K) < 1e-12


def test_projection_three_mode_single_switch():
    p = constant_problem([3.0, 2.0, 1.0], 0.8, 1.0)
    lat = deterministic_lattice(1.0, 3.0)
    sol = solve_reflected(p, lat, PROJECTION)
    np.testing.assert_allclose(sol.y0, [3.0, 2.2, 2.2], atol=1e-2)
    assert sol.contact[0][2, 0] == 0  # mode 3 binds on mode 1 directly
    assert sol.contact[0][1, 0] == 0


def test_one_mode_reflection_is_trivial():
    p = constant_problem([1.0], 0.0, 0.5)
    lat = deterministic_lattice(0.5, 1.0)
    sol = solve_reflected(p, lat)
    assert sol.k_variation_bound() == 0.0
    assert skorokhod_residual(sol, p, lat).tolist() == [0.0]


def test_projection_detects_cycles():
    g = np.array([[0.0, -0.1], [-0.1, 0.0]])[:, :, None]
    with pytest.raises(ProjectionError):
        project_modes(np.array([[1.0], [1.0]]), g)


def test_cross_mode_drivers_need_a_frozen_driver():
    with pytest.raises(ValueError, match="fixed_point_solve"):
        solve_reflected(coupled_problem(), deterministic_lattice(2.0, 2.0))


def test_backend_agreement_on_tree(binomial_problem):
    p, _ = binomial_problem
    lat = build_lattice(p.state, TimeGrid.from_step(3.0, 0.9 / 130, 1.0))
    proj = solve_reflected(p, lat, PROJECTION)
    pen = solve_reflected(p, lat, PENALIZATION)
    assert np.max(np.abs(proj.y0 - pen.y0)) <= max(1e-2, 10 / 64)
    assert min(d.min() for d in proj.dK) >= 0.0 and min(d.min() for d in pen.dK) >= 0.0
    assert all(lv.exclusivity == 0.0 for lv in pen.penalty.levels)


def test_schedule_must_increase(two_mode):
    p, lat = two_mode
    with pytest.raises(ValueError):
        solve_reflected(p, lat, PENALIZATION, schedule=(4, 2))


def test_decay_check_flags_first_increase():
    res = penalty_decay_check([(1, 1.0), (2, 0.5), (4, 0.7), (8, 0.1)])
    assert not res.passed and res.failed_level == 4


def test_decay_check_band():
    res = penalty_decay_check([(1, 1.0), (2, 0.25), (4, 0.0625), (8, 0.07)])
    assert not res.passed and res.failed_level == 8
    assert penalty_decay_check([(1, 0.0), (2, 0.0), (4, 0.0)]).passed
    with pytest.raises(ValueError):
        penalty_decay_check([(1, 1.0), (2, 0.5)])
