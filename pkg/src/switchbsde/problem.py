"""Switching problem definition and assumption checks.

A problem instance bundles the mode count, per-mode drivers f_i(t, x, y, z),
the switching-cost matrix g_ij(x), the discount rate r and the state model
for X.  Analytic hypotheses on drivers and costs are universally quantified,
so :func:`validate_assumptions` spot-checks them at seeded random points and
checks the Lipschitz modulus integrability in closed form.

Mode labels are 1-based (1..m) wherever a single mode is named by the user or
reported in a witness; array axes are 0-based.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lattice import StateModelSpec

# evaluator(t, x, y, z) -> values over nodes.
#   t: float, x: (nodes, k), y: (m, nodes) mode vector, z: (nodes,)
DriverEvaluator = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
# cost evaluator: x (nodes, k) -> (m, m, nodes)
CostEvaluator = Callable[[np.ndarray], np.ndarray]

H2 = "H2"
H2_PRIME = "H2-prime"
DEFAULT_DISCOUNT_MARGIN = 0.25


class AssumptionError(ValueError):
    """Raised when a problem fails a hard assumption check."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        names = ", ".join(c.name for c in report.failures)
        super().__init__(f"assumption check failed: {names}")


@dataclass(frozen=True)
class ModeSet:
    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"mode count must be a positive integer, got {self.m!r}")

    @property
    def labels(self) -> range:
        return range(1, self.m + 1)

    def others(self, i: int) -> list[int]:
        """Labels of every mode except ``i``."""
        if i not in self.labels:
            raise ValueError(f"mode {i} outside 1..{self.m}")
        return [j for j in self.labels if j != i]


@dataclass(frozen=True)
class LipschitzModulus:
    """Deterministic Lipschitz modulus u(t) of the drivers.

    ``form="exponential"``: u(t) = level * exp(-decay * t).
    ``form="window"``: u(t) = level on [0, window_end], 0 afterwards.

    Non-integrable moduli (decay 0, or an infinite window with level > 0) can be
    constructed so that validation can reject them with a witness.
    """

    form: str = "exponential"
    level: float = 0.0
    decay: float = 0.0
    window_end: float = math.inf

    def __post_init__(self):
        if self.form not in ("exponential", "window"):
            raise ValueError(f"unknown Lipschitz form {self.form!r}")
        if self.level < 0 or self.decay < 0:
            raise ValueError("Lipschitz level and decay must be nonnegative")
        if self.form == "window" and not self.window_end > 0:
            raise ValueError("window end must be positive")

    @classmethod
    def zero(cls) -> "LipschitzModulus":
        return cls("exponential", 0.0, 1.0)

    @classmethod
    def exponential(cls, level: float, decay: float) -> "LipschitzModulus":
        return cls("exponential", float(level), float(decay))

    @classmethod
    def window(cls, level: float, window_end: float) -> "LipschitzModulus":
        return cls("window", float(level), 0.0, float(window_end))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.form == "exponential":
            out = self.level * np.exp(-self.decay * t)
        else:
            out = np.where(t <= self.window_end, self.level, 0.0)
        return out if out.ndim else float(out)

    @property
    def sup(self) -> float:
        # both forms are nonincreasing in t
        return self.level

    def integral(self) -> float:
        if self.level == 0.0:
            return 0.0
        if self.form == "exponential":
            return self.level / self.decay if self.decay > 0 else math.inf
        return self.level * self.window_end

    def integral_sq(self) -> float:
        if self.level == 0.0:
            return 0.0
        if self.form == "exponential":
            return self.level**2 / (2 * self.decay) if self.decay > 0 else math.inf
        return self.level**2 * self.window_end

    def scaled(self, factor: float) -> "LipschitzModulus":
        return LipschitzModulus(self.form, self.level * factor, self.decay, self.window_end)


@dataclass(frozen=True)
class DriverSpec:
    """Per-mode drivers plus the declared regularity metadata.

    ``cross_y``: some f_i reads y^j for j != i.
    ``own_y``: some f_i reads its own component y^i.
    ``z_dep``: some f_i reads z.
    """

    evaluators: tuple[DriverEvaluator, ...]
    lipschitz: LipschitzModulus = field(default_factory=LipschitzModulus.zero)
    zero_bound: float = 0.0
    cross_y: bool = False
    own_y: bool = False
    z_dep: bool = False

    def __post_init__(self):
        object.__setattr__(self, "evaluators", tuple(self.evaluators))
        if self.zero_bound < 0:
            raise ValueError("zero-point bound must be nonnegative")

    @property
    def m(self) -> int:
        return len(self.evaluators)

    @property
    def y_dependent(self) -> bool:
        return self.cross_y or self.own_y

    def evaluate(self, t: float, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """All modes at once: y and z have shape (m, nodes); returns (m, nodes)."""
        nodes = y.shape[-1]
        out = np.empty((self.m, nodes))
        for i, f in enumerate(self.evaluators):
            out[i] = f(t, x, y, z[i])
        return out


@dataclass(frozen=True)
class SwitchingCostSpec:
    """Switching costs g_ij(x) given as one matrix-valued evaluator.

    ``evaluator(x)`` maps states of shape (nodes, k) to an (m, m, nodes) array.
    The diagonal is the declared g_ii; solvers never read it.
    """

    evaluator: CostEvaluator
    bound: float
    m: int

    @classmethod
    def uniform(cls, m: int, value: float) -> "SwitchingCostSpec":
        return cls.from_matrix(np.full((m, m), float(value)) - np.diag(np.full(m, float(value))))

    @classmethod
    def from_matrix(cls, matrix: Sequence[Sequence[float]]) -> "SwitchingCostSpec":
        mat = np.array(matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("cost matrix must be square")

        def evaluator(x, mat=mat):
            n = np.shape(x)[0]
            return np.broadcast_to(mat[:, :, None], mat.shape + (n,))

        return cls(evaluator, float(np.abs(mat).max(initial=0.0)), mat.shape[0])

    def matrix(self, x: np.ndarray, zero_diagonal: bool = False) -> np.ndarray:
        g = np.asarray(self.evaluator(np.atleast_2d(x)), dtype=float)
        if g.shape[:2] != (self.m, self.m):
            raise ValueError(f"cost evaluator returned shape {g.shape}, expected ({self.m}, {self.m}, n)")
        if zero_diagonal:
            g = g.copy()
            idx = np.arange(self.m)
            g[idx, idx] = 0.0
        return g


@dataclass(frozen=True)
class SwitchingProblem:
    modes: ModeSet
    drivers: DriverSpec
    costs: SwitchingCostSpec
    discount: float
    state: StateModelSpec
    assumption_mode: str = H2_PRIME

    def __post_init__(self):
        if not self.discount > 0:
            raise ValueError(f"discount rate must be positive, got {self.discount!r}")
        if self.assumption_mode not in (H2, H2_PRIME):
            raise ValueError(f"assumption mode must be {H2!r} or {H2_PRIME!r}")
        if self.drivers.m != self.modes.m:
            raise ValueError(f"{self.drivers.m} drivers for {self.modes.m} modes")
        if self.costs.m != self.modes.m:
            raise ValueError(f"cost matrix is {self.costs.m}x{self.costs.m} for {self.modes.m} modes")

    @property
    def m(self) -> int:
        return self.modes.m

    def cost_matrix(self, x: np.ndarray) -> np.ndarray:
        """g(x) with the diagonal convention of the assumption mode applied."""
        return self.costs.matrix(x, zero_diagonal=self.assumption_mode == H2)

    def with_discount(self, r: float) -> "SwitchingProblem":
        return SwitchingProblem(self.modes, self.drivers, self.costs, r, self.state, self.assumption_mode)

    def with_assumption_mode(self, mode: str) -> "SwitchingProblem":
        return SwitchingProblem(self.modes, self.drivers, self.costs, self.discount, self.state, mode)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    severity: str = "hard"  # "hard" fails the problem, "soft" only warns
    message: str = ""
    witness: dict | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "severity": self.severity,
            "message": self.message,
            "witness": self.witness,
        }


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[AssumptionCheck, ...]
    sample_budget: int
    seed: int

    @property
    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed and c.severity == "hard"]

    @property
    def warnings(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed and c.severity == "soft"]

    @property
    def ok(self) -> bool:
        return not self.failures

    def check(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def raise_if_failed(self) -> "ValidationReport":
        if not self.ok:
            raise AssumptionError(self)
        return self

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "sample_budget": self.sample_budget,
            "seed": self.seed,
            "checks": [c.to_dict() for c in self.checks],
        }


def _sample_horizon(problem: SwitchingProblem) -> float:
    return max(1.0, 10.0 / problem.discount)


def _sample_points(problem, budget, rng):
    t_max = _sample_horizon(problem)
    ts = np.concatenate([[0.0], rng.uniform(0.0, t_max, size=budget - 1)]) if budget > 1 else np.zeros(1)
    xs = np.stack([problem.state.sample(t, rng) for t in ts])
    return ts, xs


def _check_integrability(u: LipschitzModulus) -> AssumptionCheck:
    i1, i2 = u.integral(), u.integral_sq()
    ok = math.isfinite(i1) and math.isfinite(i2)
    witness = None
    msg = f"int u = {i1:.6g}, int u^2 = {i2:.6g}"
    if not ok:
        witness = {"form": u.form, "level": u.level, "decay": u.decay,
                   "window_end": None if math.isinf(u.window_end) else u.window_end,
                   "integral_u": "inf" if math.isinf(i1) else i1,
                   "integral_u_sq": "inf" if math.isinf(i2) else i2}
        msg = "Lipschitz modulus is not square integrable on [0, inf): " + msg
    return AssumptionCheck("H1-integrability", ok, "hard", msg, witness)


def _check_drivers(problem, ts, xs, rng) -> list[AssumptionCheck]:
    spec = problem.drivers
    m = problem.m
    u = spec.lipschitz
    y_scale = 1.0 + 10.0 * spec.zero_bound / problem.discount
    lip_witness = None
    zero_witness = None
    worst_zero = 0.0
    for s, (t, x) in enumerate(zip(ts, xs)):
        xv = x[None, :]
        y1 = rng.uniform(-y_scale, y_scale, size=(m, 1))
        y2 = rng.uniform(-y_scale, y_scale, size=(m, 1))
        z1 = rng.uniform(-y_scale, y_scale, size=(m, 1))
        z2 = rng.uniform(-y_scale, y_scale, size=(m, 1))
        f1 = spec.evaluate(t, xv, y1, z1)[:, 0]
        f2 = spec.evaluate(t, xv, y2, z2)[:, 0]
        f0 = spec.evaluate(t, xv, np.zeros((m, 1)), np.zeros((m, 1)))[:, 0]
        dy = float(np.linalg.norm(y1 - y2))
        for i in range(m):
            bound = u(t) * (dy + abs(float(z1[i, 0] - z2[i, 0])))
            slack = 1e-10 * (1.0 + abs(f1[i]) + abs(f2[i]))
            if lip_witness is None and abs(f1[i] - f2[i]) > bound + slack:
                lip_witness = {"mode": i + 1, "sample": s, "t": float(t), "x": x.tolist(),
                               "difference": float(abs(f1[i] - f2[i])), "bound": float(bound)}
            worst_zero = max(worst_zero, abs(f0[i]))
            if zero_witness is None and abs(f0[i]) > spec.zero_bound * (1 + 1e-12) + 1e-12:
                zero_witness = {"mode": i + 1, "sample": s, "t": float(t), "x": x.tolist(),
                                "value": float(f0[i]), "declared_bound": spec.zero_bound}
    return [
        AssumptionCheck("H1-lipschitz", lip_witness is None, "hard",
                        "Lipschitz inequality holds at all samples" if lip_witness is None
                        else "Lipschitz inequality violated", lip_witness),
        AssumptionCheck("H1-zero-bound", zero_witness is None, "hard",
                        f"max |f_i(t,x,0,0)| sampled = {worst_zero:.6g}" if zero_witness is None
                        else "declared zero-point bound exceeded", zero_witness),
    ]


def _check_costs(problem, xs) -> list[AssumptionCheck]:
    m = problem.m
    g = problem.cost_matrix(xs)  # (m, m, S)
    checks = []

    pos_witness = None
    bound_witness = None
    for i, j in itertools.product(range(m), range(m)):
        if i == j:
            continue
        s = int(np.argmin(g[i, j]))
        if pos_witness is None and not g[i, j, s] > 0:
            pos_witness = {"i": i + 1, "j": j + 1, "x": xs[s].tolist(), "g": float(g[i, j, s])}
        s = int(np.argmax(np.abs(g[i, j])))
        if bound_witness is None and abs(g[i, j, s]) > problem.costs.bound * (1 + 1e-12):
            bound_witness = {"i": i + 1, "j": j + 1, "x": xs[s].tolist(), "g": float(g[i, j, s]),
                             "declared_bound": problem.costs.bound}
    checks.append(AssumptionCheck("H2-positivity", pos_witness is None, "hard",
                                  "g_ij > 0 for i != j" if pos_witness is None
                                  else "switching cost not strictly positive", pos_witness))
    checks.append(AssumptionCheck("H2-cost-bound", bound_witness is None, "hard",
                                  "declared cost bound holds" if bound_witness is None
                                  else "declared cost bound exceeded", bound_witness))

    diag = g[np.arange(m), np.arange(m)]
    diag_ok = bool(np.all(diag >= 0))
    diag_msg = "g_ii = 0 (forced)" if problem.assumption_mode == H2 else "g_ii >= 0"
    checks.append(AssumptionCheck("H2-diagonal", diag_ok, "hard",
                                  diag_msg if diag_ok else "negative diagonal cost",
                                  None if diag_ok else {"min_diagonal": float(diag.min())}))

    weak_witness = None
    strict_witness = None
    eq_tol = 1e-12
    for i, j, l in itertools.product(range(m), repeat=3):
        if i == j or j == l:
            continue
        gap = g[i, j] + g[j, l] - g[i, l]
        s = int(np.argmin(gap))
        w = {"i": i + 1, "j": j + 1, "l": l + 1, "x": xs[s].tolist(),
             "lhs": float(g[i, j, s] + g[j, l, s]), "rhs": float(g[i, l, s])}
        if weak_witness is None and gap[s] < -eq_tol:
            weak_witness = w
        if strict_witness is None and gap[s] <= eq_tol:
            strict_witness = w
    checks.append(AssumptionCheck(
        "H2-triangle", weak_witness is None, "hard",
        "g_ij + g_jl >= g_il" if weak_witness is None else "triangle inequality violated",
        weak_witness))
    if problem.assumption_mode == H2_PRIME:
        checks.append(AssumptionCheck(
            "H2-prime-strict-triangle", strict_witness is None, "soft",
            "g_ij + g_jl > g_il" if strict_witness is None
            else "only the non-strict triangle inequality holds", strict_witness))

    # zero terminal value after discounting: 0 >= max_j (0 - g_ij) needs g_ij >= 0 off-diagonal
    h3_ok = pos_witness is None
    checks.append(AssumptionCheck("H3-terminal", h3_ok, "hard",
                                  "zero terminal value satisfies the terminal obstacle" if h3_ok
                                  else "zero terminal value violates the terminal obstacle",
                                  pos_witness))
    return checks


def validate_assumptions(problem: SwitchingProblem, sample_budget: int = 64, seed: int = 0) -> ValidationReport:
    """Check the standing hypotheses on ``problem``.

    Integrability of u and u^2 is checked in closed form; the Lipschitz
    inequality, zero-point bound, cost positivity, cost bound and the triangle
    inequality are checked at ``sample_budget`` seeded random points (t, x).
    Deterministic in ``(problem, seed)``.
    """
    if sample_budget < 1:
        raise ValueError("sample budget must be >= 1")
    rng = np.random.default_rng(seed)
    ts, xs = _sample_points(problem, sample_budget, rng)
    checks = [_check_integrability(problem.drivers.lipschitz)]
    checks += _check_drivers(problem, ts, xs, rng)
    checks += _check_costs(problem, xs)
    return ValidationReport(tuple(checks), sample_budget, seed)


@dataclass(frozen=True)
class DiscountBound:
    """Advisory lower thresholds on r; numerics may converge below them."""

    r1: float
    r2: float
    margin: float
    discount: float

    @property
    def meets_r1(self) -> bool:
        return self.discount >= self.r1

    @property
    def meets_r2(self) -> bool:
        return self.discount >= self.r2

    def to_dict(self) -> dict:
        return {"r1": self.r1, "r2": self.r2, "margin": self.margin, "discount": self.discount,
                "meets_r1": self.meets_r1, "meets_r2": self.meets_r2}


def required_discount(problem: SwitchingProblem, margin: float = DEFAULT_DISCOUNT_MARGIN) -> DiscountBound:
    """u-driven discount thresholds: r1 = sup(u^2 + u) + margin, r2 = sup 2u^2 + 1."""
    u = problem.drivers.lipschitz.sup
    return DiscountBound(u * u + u + margin, 2 * u * u + 1.0, margin, problem.discount)
