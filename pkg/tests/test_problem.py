import math

import numpy as np
import pytest

from switchbsde import (AssumptionError, DriverSpec, LipschitzModulus, ModeSet, StateModelSpec,
                        SwitchingCostSpec, SwitchingProblem, required_discount, validate_assumptions)
from switchbsde.problem import H2, H2_PRIME

from conftest import constant_drivers, constant_problem


def test_mode_set_labels_and_others():
    modes = ModeSet(3)
    assert list(modes.labels) == [1, 2, 3]
    assert modes.others(2) == [1, 3]
    with pytest.raises(ValueError):
        ModeSet(0)


def test_nonpositive_discount_rejected():
    with pytest.raises(ValueError, match="discount"):
        constant_problem([1.0], 0.0, 0.0)


def test_lipschitz_integrals_closed_form():
    u = LipschitzModulus.exponential(2.0, 4.0)
    assert u.integral() == pytest.approx(0.5)
    assert u.integral_sq() == pytest.approx(0.5)
    w = LipschitzModulus.window(3.0, 2.0)
    assert w(1.0) == 3.0 and w(2.5) == 0.0
    assert w.integral_sq() == pytest.approx(18.0)
    assert math.isinf(LipschitzModulus.window(1.0, math.inf).integral_sq())


def test_valid_constant_problem_passes():
    report = validate_assumptions(constant_problem([2.0, 1.0], 0.5, 1.0))
    assert report.ok
    assert report.check("H2-triangle").passed


def test_triangle_violation_has_lexicographic_witness():
    mat = [[0.0, 0.5, 2.0], [0.5, 0.0, 0.5], [2.0, 0.5, 0.0]]
    report = validate_assumptions(constant_problem([1.0, 1.0, 1.0], mat, 1.0))
    assert not report.ok
    chk = report.check("H2-triangle")
    assert not chk.passed
    assert (chk.witness["i"], chk.witness["j"], chk.witness["l"]) == (1, 2, 3)
    with pytest.raises(AssumptionError):
        report.raise_if_failed()


def test_non_square_integrable_modulus_rejected():
    f = DriverSpec((lambda t, x, y, z: 1.0 - y[0],), LipschitzModulus.window(1.0, math.inf), 1.0, own_y=True)
    p = SwitchingProblem(ModeSet(1), f, SwitchingCostSpec.uniform(1, 0.0), 1.0, StateModelSpec())
    report = validate_assumptions(p)
    chk = report.check("H1-integrability")
    assert not chk.passed and chk.witness is not None


def test_nonpositive_cost_rejected_under_h2_prime():
    report = validate_assumptions(constant_problem([1.0, 1.0], 0.0, 1.0))
    assert not report.check("H2-positivity").passed


def test_strict_triangle_is_soft():
    mat = [[0.0, 0.5, 1.0], [0.5, 0.0, 0.5], [1.0, 0.5, 0.0]]
    report = validate_assumptions(constant_problem([1.0, 1.0, 1.0], mat, 1.0))
    assert report.ok
    assert report.check("H2-prime-strict-triangle").severity == "soft"
    assert not report.check("H2-prime-strict-triangle").passed


def test_lipschitz_sampling_catches_understated_modulus():
    f = DriverSpec((lambda t, x, y, z: 3.0 * y[0],), LipschitzModulus.exponential(1.0, 1.0), 0.0, own_y=True)
    p = SwitchingProblem(ModeSet(1), f, SwitchingCostSpec.uniform(1, 0.0), 1.0, StateModelSpec())
    assert not validate_assumptions(p).check("H1-lipschitz").passed


def test_validation_is_seeded():
    p = constant_problem([2.0, 1.0], 0.5, 1.0)
    assert validate_assumptions(p, seed=3).to_dict() == validate_assumptions(p, seed=3).to_dict()


def test_required_discount_bounds():
    f = DriverSpec((lambda t, x, y, z: y[0],), LipschitzModulus.exponential(2.0, 1.0), 0.0, own_y=True)
    p = SwitchingProblem(ModeSet(1), f, SwitchingCostSpec.uniform(1, 0.0), 1.0, StateModelSpec())
    b = required_discount(p, margin=0.25)
    assert b.r1 == pytest.approx(4 + 2 + 0.25)
    assert b.r2 == pytest.approx(9.0)
    assert not b.meets_r1 and not b.meets_r2
    assert required_discount(p.with_discount(10.0)).meets_r2


def test_cost_matrix_diagonal_convention():
    mat = [[0.3, 0.5], [0.5, 0.3]]
    p = constant_problem([1.0, 1.0], mat, 1.0)
    assert p.cost_matrix(np.zeros((1, 1)))[0, 0, 0] == 0.3
    assert p.with_assumption_mode(H2).cost_matrix(np.zeros((1, 1)))[0, 0, 0] == 0.0
    assert p.assumption_mode == H2_PRIME


def test_driver_evaluate_shapes():
    d = constant_drivers([1.0, 2.0])
    out = d.evaluate(0.0, np.zeros((4, 1)), np.zeros((2, 4)), np.zeros((2, 4)))
    assert out.shape == (2, 4)
    np.testing.assert_array_equal(out[1], 2.0)
