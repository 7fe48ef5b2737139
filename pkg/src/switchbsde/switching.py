"""Switching strategies, switched-BSDE evaluation and the dynamic-programming oracle.

Strategies live on the lattice: switch times are grid steps and modes are
1-based labels.  Two flavours are supported:

* :class:`Strategy`, an open-loop schedule of (step, mode) switches, the same
  on every path;
* :class:`FeedbackStrategy`, a per-node decision table.  ``decisions[k]`` has
  shape (m, n_k) and holds the 0-based mode to switch into when the system is
  in mode i at that node (equal to i for "stay").  A decision at a node only
  sees that node, so it is adapted by construction.

At most one switch happens per step.  The value U_k reported at a switch step
is the value just before the switch, i.e. it already has the cost deducted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import StepDriver, as_step_driver, check_step_size, implicit_step
from .coupling import frozen_driver
from .lattice import Lattice, cond_expect, cond_expect_with_increment
from .reflect import SolutionField, obstacle

EXACT = "exact"
ITERATED = "iterated"
STABILIZATION_TOL = 1e-12


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    """Open-loop strategy: start (step, mode) and switches (step, mode), modes 1-based."""

    start_step: int
    start_mode: int
    switches: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        switches = tuple((int(s), int(j)) for s, j in self.switches)
        object.__setattr__(self, "switches", switches)
        if self.start_step < 0:
            raise ValueError("start step must be nonnegative")
        if self.start_mode < 1:
            raise ValueError("modes are labelled 1..m")
        prev_step, prev_mode = self.start_step - 1, self.start_mode
        for step, mode in switches:
            if step <= prev_step:
                raise ValueError(f"switch steps must be strictly increasing and not before the start ({step})")
            if mode < 1:
                raise ValueError("modes are labelled 1..m")
            if mode == prev_mode:
                raise ValueError(f"switch at step {step} into the current mode {mode}")
            prev_step, prev_mode = step, mode

    def check_against(self, m: int, steps: int) -> None:
        modes = [self.start_mode] + [j for _, j in self.switches]
        if max(modes) > m:
            raise ValueError(f"strategy uses mode {max(modes)} but the problem has {m}")
        last = self.switches[-1][0] if self.switches else self.start_step
        if last > steps:
            raise ValueError(f"strategy acts at step {last} beyond the grid end {steps}")

    def state(self, step: int) -> int:
        """Mode in force at ``step`` (right-continuous: a switch step gives the new mode)."""
        if step < self.start_step:
            raise ValueError(f"step {step} precedes the strategy start {self.start_step}")
        mode = self.start_mode
        for s, j in self.switches:
            if s > step:
                break
            mode = j
        return mode

    def mode_before(self, step: int) -> int:
        """Mode just before any switch at ``step``."""
        if step <= self.start_step:
            return self.start_mode
        return self.state(step - 1)

    def to_records(self) -> list[dict]:
        return [{"step": self.start_step, "mode": self.start_mode}] + [
            {"step": s, "mode": j} for s, j in self.switches]

    @classmethod
    def from_records(cls, records) -> "Strategy":
        records = list(records)
        if not records:
            raise ValueError("a strategy needs at least its start record")
        head, *rest = records
        return cls(int(head["step"]), int(head["mode"]), tuple((r["step"], r["mode"]) for r in rest))


def state_process(strategy: Strategy, t: int) -> int:
    return strategy.state(t)


@dataclass
class FeedbackStrategy:
    start_step: int
    start_mode: int
    decisions: list[np.ndarray]

    def __post_init__(self):
        if self.start_mode < 1:
            raise ValueError("modes are labelled 1..m")
        for k, d in enumerate(self.decisions):
            d = np.asarray(d)
            if d.ndim != 2 or d.min(initial=0) < 0 or d.max(initial=0) >= d.shape[0]:
                raise ValueError(f"decision table at step {k} must be (m, n_k) with targets in 0..m-1")

    @property
    def m(self) -> int:
        return self.decisions[0].shape[0]

    def switch_count(self) -> int:
        """Number of (step, node, mode) cells that switch."""
        return int(sum(np.count_nonzero(d != np.arange(d.shape[0])[:, None]) for d in self.decisions))


def _stay_table(m: int, lattice: Lattice) -> list[np.ndarray]:
    return [np.repeat(np.arange(m)[:, None], n, axis=1) for n in lattice.node_counts]


def _decision_table(strategy, m: int, lattice: Lattice) -> list[np.ndarray]:
    if isinstance(strategy, FeedbackStrategy):
        if strategy.m != m or len(strategy.decisions) != lattice.steps + 1:
            raise ValueError("decision table does not match the problem and lattice")
        return [np.asarray(d, dtype=np.intp) for d in strategy.decisions]
    strategy.check_against(m, lattice.steps)
    table = _stay_table(m, lattice)
    prev = strategy.start_mode
    for step, mode in strategy.switches:
        table[step][prev - 1, :] = mode - 1
        prev = mode
    return table


# ---------------------------------------------------------------------------
# cost process and evaluation
# ---------------------------------------------------------------------------


@dataclass
class CostProcess:
    """Discounted switching costs: ``jumps[k]`` is paid at step k, ``A[k]`` includes it."""

    jumps: list[np.ndarray]
    A: list[np.ndarray]
    terminal_weights: np.ndarray

    @property
    def total(self) -> float:
        """E[A at the grid end]."""
        return float(self.A[-1] @ self.terminal_weights)


def cost_process(strategy: Strategy, problem, lattice: Lattice) -> CostProcess:
    """A_k = sum over switches with tau_n <= k of e^{-r tau_n} g_{zeta_{n-1} zeta_n}(X_{tau_n})."""
    if not isinstance(strategy, Strategy):
        raise TypeError("cost_process takes an open-loop Strategy")
    strategy.check_against(problem.m, lattice.steps)
    disc = lattice.grid.discount_weights
    jumps = [np.zeros(n) for n in lattice.node_counts]
    prev = strategy.start_mode
    for step, mode in strategy.switches:
        g = problem.cost_matrix(lattice.states[step])
        jumps[step] = disc[step] * g[prev - 1, mode - 1]
        prev = mode
    before = lattice.forward_conditional(jumps[:-1])
    A = [b + j for b, j in zip(before, jumps)]
    return CostProcess(jumps, A, lattice.marginals[-1])


@dataclass
class StrategyEvaluation:
    """Switched-BSDE solution for one strategy.

    ``table[k]`` (m, n_k): value when entering step k in mode i and following
    the strategy's decisions from there.  For an open-loop strategy ``U``,
    ``V`` and ``A`` follow the strategy's own mode path; for feedback
    strategies they are None.
    """

    start_step: int
    start_mode: int
    table: list[np.ndarray | None]
    U: list[np.ndarray] | None = None
    V: list[np.ndarray] | None = None
    A: list[np.ndarray] | None = None

    @property
    def value(self) -> np.ndarray:
        """U at the start step in the start mode, per node."""
        return self.table[self.start_step][self.start_mode - 1]

    @property
    def u0(self) -> float:
        return float(self.value[0])


def _step_setup(problem, driver, y_dependent):
    if driver is None:
        if problem.drivers.cross_y:
            raise ValueError("drivers read other modes' values; pass a frozen driver")
        return as_step_driver(problem.drivers), problem.drivers.y_dependent
    return driver, (True if y_dependent is None else y_dependent)


def cost_tables(problem, lattice: Lattice) -> list[np.ndarray]:
    """g(X_k) for every step; reuse across many strategy evaluations."""
    return [problem.cost_matrix(x) for x in lattice.states]


def eval_strategy(strategy, problem, lattice: Lattice, *, driver: StepDriver | None = None,
                  y_dependent: bool | None = None, costs: list[np.ndarray] | None = None
                  ) -> StrategyEvaluation:
    """Backward induction of the switched BSDE for ``strategy`` (zero terminal value).

    ``costs`` may carry precomputed :func:`cost_tables` for the lattice.
    """
    m, r, dt = problem.m, problem.discount, lattice.dt
    step_driver, y_dep = _step_setup(problem, driver, y_dependent)
    check_step_size(lattice, problem.drivers.lipschitz.sup, r)
    table = _decision_table(strategy, m, lattice)
    start = strategy.start_step
    steps = lattice.steps
    times = lattice.grid.times
    modes = np.arange(m)[:, None]

    U = [None] * (steps + 1)
    Zs = [None] * (steps + 1)
    cont = np.zeros((m, lattice.node_counts[steps]))
    zcont = np.zeros_like(cont)
    for k in range(steps, start - 1, -1):
        if k < steps:
            ey = cond_expect(lattice, k, U[k + 1])
            zcont = cond_expect_with_increment(lattice, k, U[k + 1])
            cont, _ = implicit_step(step_driver, k, times[k], lattice.states[k], ey, zcont, dt, r,
                                    y_dependent=y_dep)
        d = table[k]
        moving = d != modes
        if not moving.any():
            U[k], Zs[k] = cont, zcont
            continue
        g = costs[k] if costs is not None else problem.cost_matrix(lattice.states[k])
        cols = np.arange(d.shape[1])
        cost = np.where(moving, g[modes, d, cols], 0.0)
        U[k] = cont[d, cols] - cost
        Zs[k] = zcont[d, cols]

    ev = StrategyEvaluation(start, strategy.start_mode, U)
    if isinstance(strategy, Strategy):
        path_u, path_v = [], []
        for k in range(start, steps + 1):
            before = strategy.mode_before(k) - 1
            after = strategy.state(k) - 1
            path_u.append(U[k][before])
            path_v.append(Zs[k][after])
        pad = [None] * start
        ev.U = pad + path_u
        ev.V = pad + path_v
        ev.A = cost_process(strategy, problem, lattice).A
    return ev


# ---------------------------------------------------------------------------
# dynamic-programming oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    """DP values with a switch budget.

    ``fields[b][k]`` (m, n_k) is the best value with at most b switches;
    ``values0[b]`` its root value per mode.  ``strategy`` is the extracted
    optimal feedback strategy started in ``mode``.
    """

    mode: int
    budget: int
    fields: list[list[np.ndarray]]
    values0: np.ndarray
    stabilized: bool
    stabilization_budget: int | None
    strategy: FeedbackStrategy
    regime: str = EXACT
    passes: int = 1
    warnings: list[str] = field(default_factory=list)

    @property
    def value(self) -> list[np.ndarray]:
        """Value field of ``mode`` at the full budget."""
        return [v[self.mode - 1] for v in self.fields[-1]]

    @property
    def value0(self) -> np.ndarray:
        return self.values0[-1]

    def for_mode(self, mode: int) -> "OracleResult":
        strat = FeedbackStrategy(0, mode, self.strategy.decisions)
        return OracleResult(mode, self.budget, self.fields, self.values0, self.stabilized,
                            self.stabilization_budget, strat, self.regime, self.passes, self.warnings)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "budget": self.budget, "values0": self.values0.tolist(),
                "stabilized": self.stabilized, "stabilization_budget": self.stabilization_budget,
                "regime": self.regime, "passes": self.passes, "warnings": list(self.warnings)}


def _dp(problem, lattice: Lattice, budget: int, step_driver, y_dep):
    m, r, dt = problem.m, problem.discount, lattice.dt
    steps = lattice.steps
    times = lattice.grid.times
    V = [[None] * (steps + 1) for _ in range(budget + 1)]
    top_cont = [None] * (steps + 1)
    for k in range(steps, -1, -1):
        g = problem.cost_matrix(lattice.states[k])
        for b in range(budget + 1):
            if k == steps:
                c = np.zeros((m, lattice.node_counts[steps]))
            else:
                ey = cond_expect(lattice, k, V[b][k + 1])
                z = cond_expect_with_increment(lattice, k, V[b][k + 1])
                c, _ = implicit_step(step_driver, k, times[k], lattice.states[k], ey, z, dt, r,
                                     y_dependent=y_dep)
            if b == 0 or m == 1:
                V[b][k] = c
            else:
                obst, _ = obstacle(V[b - 1][k], g)
                V[b][k] = np.maximum(c, obst)
        top_cont[k] = c
    return V, top_cont


def _extract(problem, lattice: Lattice, values: list[np.ndarray], cont: list[np.ndarray]) -> list[np.ndarray]:
    """Switch where the best switch strictly beats continuing; ties go to the lowest mode.

    A chain of switches at one instant is collapsed to its final mode, which
    the triangle inequality makes equally good.
    """
    m = problem.m
    table = _stay_table(m, lattice)
    if m == 1:
        return table
    modes = np.arange(m)[:, None]
    for k in range(lattice.steps + 1):
        obst, arg = obstacle(values[k], problem.cost_matrix(lattice.states[k]))
        switch = obst > cont[k]
        target = np.where(switch, arg, modes)
        for _ in range(m):
            nxt = np.take_along_axis(target, target, axis=0)
            if np.array_equal(nxt, target):
                break
            target = nxt
        table[k] = target
    return table


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    scale = 1.0 + max(float(np.max(np.abs(x))) for x in a)
    return all(np.max(np.abs(x - y), initial=0.0) <= STABILIZATION_TOL * scale for x, y in zip(a, b))


def oracle_value(problem, lattice: Lattice, mode: int = 1, switch_budget: int | None = None, *,
                 max_passes: int = 50, pass_tol: float = 1e-10) -> OracleResult:
    """Dynamic programming over (step, node, mode, switches used).

    Drivers that do not read other modes' values are handled exactly; otherwise
    the DP is repeated with drivers frozen at the previous pass's values until
    two passes agree within ``pass_tol``.
    """
    m = problem.m
    if not 1 <= mode <= m:
        raise ValueError(f"mode {mode} outside 1..{m}")
    budget = m if switch_budget is None else int(switch_budget)
    if budget < 0:
        raise ValueError("switch budget must be nonnegative")
    check_step_size(lattice, problem.drivers.lipschitz.sup, problem.discount)

    notes = []
    if not problem.drivers.cross_y:
        step_driver, y_dep = as_step_driver(problem.drivers), problem.drivers.y_dependent
        V, cont = _dp(problem, lattice, budget, step_driver, y_dep)
        regime, passes = EXACT, 1
    else:
        regime = ITERATED
        gamma = lattice.zeros(m)
        for passes in range(1, max_passes + 1):
            V, cont = _dp(problem, lattice, budget, frozen_driver(problem, gamma), problem.drivers.own_y)
            diff = max(float(np.max(np.abs(a - b), initial=0.0)) for a, b in zip(V[-1], gamma))
            gamma = V[-1]
            if diff <= pass_tol:
                break
        else:
            notes.append(f"iterated oracle still moving by {diff:.3g} after {max_passes} passes")

    stab = None
    if m == 1:
        stab = 0
    else:
        for b in range(budget):
            if _same(V[b + 1], V[b]):
                stab = b
                break
    stabilized = stab is not None
    if not stabilized:
        notes.append(f"values still increase between budgets {budget - 1} and {budget}")
    values0 = np.array([[v[i, 0] for i in range(m)] for v in (f[0] for f in V)])
    decisions = _extract(problem, lattice, V[-1], cont)
    return OracleResult(mode, budget, V, values0, stabilized, stab,
                        FeedbackStrategy(0, mode, decisions), regime, passes, notes)


# ---------------------------------------------------------------------------
# sampling and the representation check
# ---------------------------------------------------------------------------


def random_strategies(problem, lattice: Lattice, count: int, seed: int = 0, *, max_switches: int = 4,
                      feedback_fraction: float = 0.5, start_mode: int | None = None) -> list:
    """Seeded mix of open-loop and feedback strategies, all starting at step 0."""
    rng = np.random.default_rng(seed)
    m, steps = problem.m, lattice.steps
    out = []
    for _ in range(count):
        mode0 = int(rng.integers(1, m + 1)) if start_mode is None else start_mode
        if m > 1 and rng.random() < feedback_fraction:
            table = _stay_table(m, lattice)
            rate = rng.uniform(0.0, 3.0) / max(steps, 1)
            for k, d in enumerate(table):
                flip = rng.random(d.shape) < rate
                shift = rng.integers(1, m, size=d.shape)
                table[k] = np.where(flip, (d + shift) % m, d)
            out.append(FeedbackStrategy(0, mode0, table))
            continue
        n_sw = int(rng.integers(0, max_switches + 1)) if m > 1 else 0
        n_sw = min(n_sw, steps + 1)
        times = np.sort(rng.choice(steps + 1, size=n_sw, replace=False))
        sw, prev = [], mode0
        for t in times:
            nxt = int((prev - 1 + rng.integers(1, m)) % m) + 1
            sw.append((int(t), nxt))
            prev = nxt
        out.append(Strategy(0, mode0, tuple(sw)))
    return out


@dataclass
class RepresentationReport:
    domination_violations: list[dict]
    max_excess: float
    oracle_delta: float
    oracle_stabilized: bool
    stabilization_budget: int | None
    attainment_delta: float
    strategies_checked: int
    tol: float
    oracle_tol: float
    regime: str = EXACT

    @property
    def dominated(self) -> bool:
        return not self.domination_violations

    @property
    def oracle_ok(self) -> bool:
        return bool(self.oracle_delta <= self.oracle_tol)

    @property
    def attained(self) -> bool:
        return bool(self.attainment_delta <= self.oracle_tol)

    @property
    def passed(self) -> bool:
        return self.dominated and self.oracle_ok and self.attained

    def to_dict(self) -> dict:
        return {"passed": self.passed, "dominated": self.dominated, "max_excess": self.max_excess,
                "domination_violations": self.domination_violations, "oracle_delta": self.oracle_delta,
                "oracle_stabilized": self.oracle_stabilized,
                "stabilization_budget": self.stabilization_budget,
                "attainment_delta": self.attainment_delta, "strategies_checked": self.strategies_checked,
                "tol": self.tol, "oracle_tol": self.oracle_tol, "regime": self.regime}


def representation_check(problem, lattice: Lattice, solution: SolutionField, strategies, *,
                         tol: float = 1e-8, oracle_tol: float = 1e-6, switch_budget: int | None = None,
                         driver: StepDriver | None = None) -> RepresentationReport:
    """Domination by Y, oracle agreement with Y_0 and attainment by the extracted strategy.

    For drivers that read other modes' values, ``driver`` defaults to the
    drivers frozen at ``solution``, so strategies are evaluated in the
    environment of the solved system.
    """
    y_dep = None
    if problem.drivers.cross_y and driver is None:
        driver = frozen_driver(problem, solution.Y)
        y_dep = problem.drivers.own_y
    violations, excess = [], -np.inf
    costs = cost_tables(problem, lattice)
    for idx, s in enumerate(strategies):
        ev = eval_strategy(s, problem, lattice, driver=driver, y_dependent=y_dep, costs=costs)
        gap = float(np.max(ev.value - solution.Y[s.start_step][s.start_mode - 1]))
        excess = max(excess, gap)
        if gap > tol:
            violations.append({"index": idx, "start_mode": s.start_mode, "excess": gap})

    oracle = oracle_value(problem, lattice, 1, switch_budget)
    y0 = solution.y0
    oracle_delta = float(np.max(np.abs(oracle.value0 - y0)))
    attain = 0.0
    for i in range(1, problem.m + 1):
        ev = eval_strategy(oracle.for_mode(i).strategy, problem, lattice, driver=driver, y_dependent=y_dep,
                           costs=costs)
        attain = max(attain, float(abs(ev.u0 - y0[i - 1])))
    return RepresentationReport(violations, float(excess) if strategies else 0.0, oracle_delta,
                                oracle.stabilized, oracle.stabilization_budget, attain, len(strategies),
                                tol, oracle_tol, oracle.regime)
