"""Decoupled oblique-reflection solvers: penalization and direct projection.

Both backends produce a :class:`SolutionField` (Y, Z, dK) with K accounted in
discounted units: ``dK[k]`` is the reflection increment over [t_k, t_{k+1}),
so K_0 = 0 and K_{k+1} = K_k + dK_k along every path.

Penalization solves, at each level n, the coupled BSDE with driver
f_i + n * sum_j (y^i - y^j + g_ij)^-.  The per-node implicit system is
piecewise linear in Y; it is resolved exactly by active-set (policy)
iteration, with Picard iteration kept only for the driver part.

Projection takes the unconstrained one-step candidate and lifts each mode to
max(candidate, max_{j != i}(Y^j - g_ij)), iterating over modes to a fixed
point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bsde import (BsdeField, InnerIterationError, StepDriver, as_step_driver, check_step_size,
                   implicit_step)
from .lattice import Lattice, cond_expect, cond_expect_with_increment

PENALIZATION = "penalization"
PROJECTION = "projection"
DEFAULT_SCHEDULE = (1, 2, 4, 8, 16, 32, 64)
MONOTONE_TOL = 1e-10


class ProjectionError(RuntimeError):
    """The projection over modes did not reach a fixed point (cyclic costs)."""


@dataclass
class PenaltyLevel:
    n: int
    violation: float  # E int sum_{i,j} [(Y^i - Y^j + g_ij)^-]^2 ds
    violation_per_mode: np.ndarray
    sup_violation: float
    exclusivity: float  # max (Y^ij)^- (Y^ji)^-
    skorokhod: np.ndarray
    balance_residual: float
    monotone_gap: float | None = None  # max (Y^{previous level} - Y^{this level})

    @property
    def scaled(self) -> float:
        return self.n * self.n * self.violation

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "violation": self.violation,
            "scaled_violation": self.scaled,
            "violation_per_mode": self.violation_per_mode.tolist(),
            "sup_violation": self.sup_violation,
            "exclusivity": self.exclusivity,
            "skorokhod": self.skorokhod.tolist(),
            "balance_residual": self.balance_residual,
            "monotone_gap": self.monotone_gap,
        }


@dataclass
class PenaltyDiagnostics:
    levels: list[PenaltyLevel] = field(default_factory=list)

    @property
    def ns(self) -> list[int]:
        return [lv.n for lv in self.levels]

    @property
    def violations(self) -> list[float]:
        return [lv.violation for lv in self.levels]

    @property
    def scaled(self) -> list[float]:
        return [lv.scaled for lv in self.levels]

    def to_dict(self) -> dict:
        return {"levels": [lv.to_dict() for lv in self.levels]}


@dataclass
class SolutionField(BsdeField):
    """(Y, Z, K) on the lattice; ``dK[k]`` has shape (m, n_k), ``dK[N]`` is zero."""

    dK: list[np.ndarray] = field(default_factory=list)
    backend: str = PROJECTION
    contact: list[np.ndarray] | None = None  # binding mode (0-based, -1 if free), projection only
    penalty: PenaltyDiagnostics | None = None

    def K(self, lattice: Lattice) -> list[np.ndarray]:
        """E[K_k | node at step k]; pathwise exact wherever dK is path independent."""
        return lattice.forward_conditional(self.dK[:-1])

    def k_variation_bound(self) -> float:
        """Upper bound on the total variation of K along any path."""
        return float(sum(np.max(np.abs(d), initial=0.0) for d in self.dK))

    def min_k_increment(self) -> float:
        return float(min(np.min(d, initial=0.0) for d in self.dK))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _costs_at(problem, lattice: Lattice, k: int) -> np.ndarray:
    # off-diagonal costs only; solvers never read g_ii
    return problem.costs.matrix(lattice.states[k], zero_diagonal=True)


def obstacle(y: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """max_{j != i}(Y^j - g_ij) and the lowest maximizing j (0-based).

    For a single mode the obstacle is -inf.
    """
    m = y.shape[0]
    vals = y[None, :, :] - g
    idx = np.arange(m)
    vals[idx, idx] = -np.inf
    arg = np.argmax(vals, axis=1)
    return np.max(vals, axis=1), arg


def _negative_parts(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(Y^i - Y^j + g_ij)^- with shape (m, m, nodes); zero on the diagonal."""
    return np.maximum(-(y[:, None, :] - y[None, :, :] + g), 0.0)


def penalty_resolvent(g: np.ndarray, n: float, dt: float, r: float, max_iter: int = 50):
    """Exact solver for (1 + r dt) Y - n dt sum_j (Y^i - Y^j + g_ij)^- = b.

    The left side is a concave piecewise-linear map with Z-matrix slopes, so
    policy iteration over the active set {Y^i - Y^j + g_ij < 0} terminates.
    """
    scale = 1.0 + r * dt
    c = n * dt
    m = g.shape[0]
    eye = np.eye(m)

    def resolve(b: np.ndarray, guess: np.ndarray) -> np.ndarray:
        if c == 0.0 or m == 1:
            return b / scale
        y = guess
        active = (y[:, None, :] - y[None, :, :] + g) < 0
        for _ in range(max_iter):
            y = b / scale
            nodes = np.flatnonzero(active.any(axis=(0, 1)))
            if nodes.size:
                a = np.moveaxis(active[:, :, nodes], 2, 0).astype(float)  # (q, m, m)
                jac = scale * eye + c * (a.sum(axis=2)[:, :, None] * eye - a)
                rhs = b[:, nodes].T - c * np.einsum("qij,ijq->qi", a, g[:, :, nodes])
                y[:, nodes] = np.linalg.solve(jac, rhs[..., None])[..., 0].T
            new_active = (y[:, None, :] - y[None, :, :] + g) < 0
            if np.array_equal(new_active, active):
                return y
            active = new_active
        raise InnerIterationError("penalty active-set iteration did not terminate")

    return resolve


def _driver_setup(problem, driver, y_dependent):
    if driver is None:
        if problem.drivers.cross_y:
            raise ValueError("drivers depend on other modes' y; use coupling.fixed_point_solve")
        return as_step_driver(problem.drivers), problem.drivers.y_dependent
    return driver, (True if y_dependent is None else y_dependent)


# ---------------------------------------------------------------------------
# penalization
# ---------------------------------------------------------------------------


def penalized_driver(problem, n: float, i: int, t: float, x, ybar, z):
    """f_i(t, x, y, z) + n * sum_{j=1..m} (y^i - y^j + g_ij(x))^- for mode label i."""
    scalar = np.ndim(ybar) == 1
    y = np.asarray(ybar, dtype=float).reshape(problem.m, -1)
    xv = np.atleast_2d(np.asarray(x, dtype=float))
    zv = np.atleast_1d(np.asarray(z, dtype=float))
    base = problem.drivers.evaluators[i - 1](t, xv, y, zv)
    g = problem.cost_matrix(xv)
    pen = np.maximum(-(y[i - 1][None, :] - y + g[i - 1]), 0.0).sum(axis=0)
    out = np.asarray(base + n * pen, dtype=float)
    return float(out[0]) if scalar else out


def solve_penalized(problem, lattice: Lattice, n: float, *, driver: StepDriver | None = None,
                    y_dependent: bool | None = None, warm: list[np.ndarray] | None = None
                    ) -> tuple[SolutionField, PenaltyLevel]:
    """Solve the penalized BSDE at level n, jointly over modes."""
    step_driver, y_dep = _driver_setup(problem, driver, y_dependent)
    m, r, dt = problem.m, problem.discount, lattice.dt
    check_step_size(lattice, problem.drivers.lipschitz.sup, r, extra=n * m)
    steps = lattice.steps
    times = lattice.grid.times
    disc = lattice.grid.discount_weights

    Y = [None] * (steps + 1)
    Z = [None] * (steps + 1)
    dK = [None] * (steps + 1)
    Y[steps] = np.zeros((m, lattice.node_counts[steps]))
    Z[steps] = np.zeros_like(Y[steps])
    dK[steps] = np.zeros_like(Y[steps])

    viol = np.zeros(m)
    sup_viol = 0.0
    excl = 0.0
    skor = np.zeros(m)
    balance = 0.0
    for k in range(steps - 1, -1, -1):
        g = _costs_at(problem, lattice, k)
        ey = cond_expect(lattice, k, Y[k + 1])
        z = cond_expect_with_increment(lattice, k, Y[k + 1])
        resolve = penalty_resolvent(g, n, dt, r)
        guess = ey if warm is None else warm[k]
        y, f = implicit_step(step_driver, k, times[k], lattice.states[k], ey, z, dt, r,
                             y_dependent=y_dep, resolvent=resolve, guess=guess)
        neg = _negative_parts(y, g)
        d = disc[k] * n * dt * neg.sum(axis=1)
        Y[k], Z[k], dK[k] = y, z, d

        w = lattice.marginals[k]
        viol += dt * ((neg**2).sum(axis=1) @ w)
        if neg.size:
            sup_viol = max(sup_viol, float(neg.max()))
            excl = max(excl, float((neg * np.swapaxes(neg, 0, 1)).max()))
        if m > 1:
            obst, _ = obstacle(y, g)
            skor += (disc[k] * (y - obst) * d) @ w
        resid = disc[k] * ((1.0 + r * dt) * y - ey - dt * f) - d
        balance = max(balance, float(np.max(np.abs(resid), initial=0.0)))

    sol = SolutionField(Y, Z, dK=dK, backend=PENALIZATION)
    level = PenaltyLevel(n=int(n) if float(n).is_integer() else n, violation=float(viol.sum()),
                         violation_per_mode=viol, sup_violation=sup_viol, exclusivity=excl,
                         skorokhod=np.abs(skor), balance_residual=balance)
    return sol, level


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def project_modes(cand: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fixed point of Y^i = max(cand^i, max_{j != i}(Y^j - g_ij)) and the binding modes."""
    m = cand.shape[0]
    y = cand
    for _ in range(m * m + 1):
        obst, arg = obstacle(y, g)
        y_new = np.maximum(cand, obst)
        if np.array_equal(y_new, y):
            contact = np.where(y > cand, arg, -1)
            return y, contact
        y = y_new
    raise ProjectionError(f"projection over {m} modes did not settle in {m * m} passes; "
                          "check the triangle inequality of the costs")


def _solve_projection(problem, lattice, step_driver, y_dep) -> SolutionField:
    m, r, dt = problem.m, problem.discount, lattice.dt
    check_step_size(lattice, problem.drivers.lipschitz.sup, r)
    steps = lattice.steps
    times = lattice.grid.times
    disc = lattice.grid.discount_weights
    Y = [None] * (steps + 1)
    Z = [None] * (steps + 1)
    dK = [None] * (steps + 1)
    contact = [None] * (steps + 1)
    Y[steps] = np.zeros((m, lattice.node_counts[steps]))
    Z[steps] = np.zeros_like(Y[steps])
    dK[steps] = np.zeros_like(Y[steps])
    contact[steps] = np.full(Y[steps].shape, -1)
    for k in range(steps - 1, -1, -1):
        ey = cond_expect(lattice, k, Y[k + 1])
        z = cond_expect_with_increment(lattice, k, Y[k + 1])
        cand, _ = implicit_step(step_driver, k, times[k], lattice.states[k], ey, z, dt, r,
                                y_dependent=y_dep)
        if m > 1:
            y, contact[k] = project_modes(cand, _costs_at(problem, lattice, k))
        else:
            y, contact[k] = cand, np.full(cand.shape, -1)
        Y[k], Z[k] = y, z
        dK[k] = disc[k] * (y - cand)
    return SolutionField(Y, Z, dK=dK, backend=PROJECTION, contact=contact)


def solve_reflected(problem, lattice: Lattice, backend: str = PROJECTION, schedule=None, *,
                    driver: StepDriver | None = None, y_dependent: bool | None = None) -> SolutionField:
    """Solve the decoupled reflected system with the chosen backend.

    ``driver`` overrides the problem's drivers with a step driver
    (k, t, x, Y, Z) -> (m, nodes); this is how frozen cross-mode profiles are
    passed in by the coupling module.
    """
    step_driver, y_dep = _driver_setup(problem, driver, y_dependent)
    if backend == PROJECTION:
        return _solve_projection(problem, lattice, step_driver, y_dep)
    if backend != PENALIZATION:
        raise ValueError(f"unknown backend {backend!r}")

    schedule = tuple(DEFAULT_SCHEDULE if schedule is None else schedule)
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("penalty schedule must be a nonempty increasing sequence")
    check_step_size(lattice, problem.drivers.lipschitz.sup, problem.discount, extra=schedule[-1] * problem.m)

    trace = PenaltyDiagnostics()
    previous = None
    for n in schedule:
        sol, level = solve_penalized(problem, lattice, n, driver=step_driver, y_dependent=y_dep,
                                     warm=None if previous is None else previous.Y)
        if previous is not None:
            level.monotone_gap = float(max(np.max(a - b) for a, b in zip(previous.Y, sol.Y)))
            if level.monotone_gap > MONOTONE_TOL:
                warnings.warn(f"penalized solution decreased from level {trace.levels[-1].n} to {n} "
                              f"by {level.monotone_gap:.3g}", RuntimeWarning, stacklevel=2)
        trace.levels.append(level)
        previous = sol
    previous.penalty = trace
    return previous


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def obstacle_violation(solution: BsdeField, problem, lattice: Lattice) -> float:
    """max over (step, node, mode) of (max_{j != i}(Y^j - g_ij) - Y^i)^+."""
    if problem.m == 1:
        return 0.0
    worst = 0.0
    for k in range(lattice.steps + 1):
        obst, _ = obstacle(solution.Y[k], _costs_at(problem, lattice, k))
        worst = max(worst, float(np.max(obst - solution.Y[k])))
    return worst


def skorokhod_residual(solution: SolutionField, problem, lattice: Lattice) -> np.ndarray:
    """|E sum_k e^{-r t_k} (Y_k^i - obstacle_k^i) dK_k^i| per mode."""
    m = problem.m
    out = np.zeros(m)
    if m == 1:
        return out
    disc = lattice.grid.discount_weights
    for k in range(lattice.steps):
        d = solution.dK[k]
        if not np.any(d):
            continue
        obst, _ = obstacle(solution.Y[k], _costs_at(problem, lattice, k))
        term = np.where(d != 0.0, disc[k] * (solution.Y[k] - obst) * d, 0.0)
        out += term @ lattice.marginals[k]
    return np.abs(out)


@dataclass
class DecayCheck:
    passed: bool
    failed_level: int | None
    reason: str
    ns: list
    violations: list[float]
    scaled: list[float]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "failed_level": self.failed_level, "reason": self.reason,
                "n": list(self.ns), "violation": list(self.violations), "scaled": list(self.scaled)}


def penalty_decay_check(trace, band: float = 4.0) -> DecayCheck:
    """eps_n nonincreasing in n and max n^2 eps_n <= band * median n^2 eps_n.

    ``trace`` is PenaltyDiagnostics or a sequence of (n, eps_n) pairs.
    """
    if isinstance(trace, PenaltyDiagnostics):
        pairs = [(lv.n, lv.violation) for lv in trace.levels]
    else:
        pairs = [(n, float(e)) for n, e in trace]
    if len(pairs) < 3:
        raise ValueError("penalty decay check needs at least 3 levels")
    ns = [n for n, _ in pairs]
    eps = [e for _, e in pairs]
    scaled = [n * n * e for n, e in pairs]
    if any(e < 0 for e in eps):
        bad = next(n for n, e in pairs if e < 0)
        return DecayCheck(False, bad, "negative violation", ns, eps, scaled)
    for (n0, e0), (n1, e1) in zip(pairs, pairs[1:]):
        if e1 > e0 * (1 + 1e-9) + 1e-18:
            return DecayCheck(False, n1, f"violation increased from n={n0} to n={n1}", ns, eps, scaled)
    med = float(np.median(scaled))
    top = int(np.argmax(scaled))
    if scaled[top] > band * med:
        return DecayCheck(False, ns[top], f"n^2 eps_n = {scaled[top]:.4g} exceeds {band:g} x median {med:.4g}",
                          ns, eps, scaled)
    return DecayCheck(True, None, "ok", ns, eps, scaled)
