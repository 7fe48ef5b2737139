"""solve / verify / convergence commands and their reports.

Reports are plain JSON with sorted keys.  Wall-clock timings are kept out of
the report unless explicitly requested, so identical configurations produce
identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import SCHEMA_VERSION, RunConfig
from .coupling import (apply_phi, contraction_probe, field_difference, fixed_point_solve, frozen_driver,
                       norm_method, weighted_norm)
from .problem import required_discount, validate_assumptions
from .reflect import (PENALIZATION, PROJECTION, obstacle_violation, penalty_decay_check, skorokhod_residual,
                      solve_reflected)
from .registry import ConfigError
from .switching import EXACT, oracle_value, random_strategies, representation_check

HARD = "hard"
WARNING = "warning"

OBSTACLE_TOL = 1e-12
SKOROKHOD_TOL = 1e-10
PENALTY_SKOROKHOD_TOL = 1e-2
PENALTY_OBSTACLE_TOL = 5e-2
DECAY_BAND = 4.0
THREADS_ENV = "SWITCHBSDE_THREADS"


def backend_agreement_tol(n_max: float) -> float:
    """Allowed |Y0 projection - Y0 penalization| at the largest penalty level."""
    return max(1e-2, 10.0 / n_max)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: expected an integer, got {raw!r}") from None


def _clean(value: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    return value


@dataclass
class Check:
    name: str
    passed: bool
    value: Any = None
    threshold: Any = None
    severity: str = HARD
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": self.value,
                "threshold": self.threshold, "severity": self.severity, "detail": self.detail}


@dataclass
class SolveReport:
    command: str
    config: dict
    sections: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    timing: dict | None = None
    stage: Any = field(default=None, repr=False, compare=False)  # solved arrays, not serialized

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.severity == HARD)

    @property
    def warnings(self) -> list[Check]:
        return [c for c in self.checks if c.severity == WARNING and not c.passed]

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "command": self.command, "config": self.config,
               **self.sections, "checks": [c.to_dict() for c in self.checks], "passed": self.passed}
        if self.timing is not None:
            out["timing"] = self.timing
        return _clean(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def summary_lines(self) -> list[str]:
        name = self.config.get("name") or "unnamed"
        lines = [f"{self.command} {name}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            status = "ok" if c.passed else ("WARN" if c.severity == WARNING else "FAIL")
            lines.append(f"  [{status:4}] {c.name}: {c.detail or c.value}")
        return lines


class _Clock:
    def __init__(self):
        self.marks: dict[str, float] = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        self.marks[name] = self.marks.get(name, 0.0) + time.perf_counter() - t0
        return out


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def _lattice_info(lattice) -> dict:
    return {"kind": lattice.kind, "horizon": lattice.grid.horizon, "steps": lattice.steps, "dt": lattice.dt,
            "nodes_final": lattice.node_counts[-1], "norm_method": norm_method(lattice)}


def _solve(config: RunConfig, problem, lattice, clock: _Clock):
    """(solution, coupling state or None) on ``lattice`` with the configured backend."""
    s = config.solver
    if problem.drivers.cross_y:
        sol, state = clock.run("fixed_point", fixed_point_solve, problem, lattice,
                               s["fixed_point_tol"], s["max_iters"])
        if s["backend"] == PENALIZATION:
            sol = clock.run("penalization", solve_reflected, problem, lattice, PENALIZATION,
                            s["penalty_schedule"], driver=frozen_driver(problem, state.gamma),
                            y_dependent=problem.drivers.own_y)
        return sol, state
    return clock.run("solve", solve_reflected, problem, lattice, s["backend"], s["penalty_schedule"]), None


def _solution_checks(problem, lattice, sol, report: SolveReport) -> None:
    finite = sol.is_finite()
    report.checks.append(Check("solution-finite", finite, finite))
    viol = obstacle_violation(sol, problem, lattice)
    skor = skorokhod_residual(sol, problem, lattice)
    min_dk = sol.min_k_increment()
    diag = {"obstacle_violation": viol, "skorokhod_residual": skor, "k_variation_bound": sol.k_variation_bound(),
            "min_k_increment": min_dk}
    if sol.backend == PROJECTION:
        report.checks.append(Check("obstacle", viol <= OBSTACLE_TOL, viol, OBSTACLE_TOL))
        report.checks.append(Check("skorokhod", float(skor.max()) <= SKOROKHOD_TOL, float(skor.max()), SKOROKHOD_TOL))
    else:
        final = sol.penalty.levels[-1]
        diag["penalty"] = sol.penalty.to_dict()
        report.checks.append(Check("penalty-obstacle", final.sup_violation <= PENALTY_OBSTACLE_TOL,
                                   final.sup_violation, PENALTY_OBSTACLE_TOL))
        report.checks.append(Check("penalty-skorokhod", float(final.skorokhod.max()) <= PENALTY_SKOROKHOD_TOL,
                                   float(final.skorokhod.max()), PENALTY_SKOROKHOD_TOL))
    report.checks.append(Check("k-nondecreasing", min_dk >= -1e-12, min_dk, -1e-12))
    report.sections["diagnostics"] = diag


def _coupling_checks(problem, state, report: SolveReport) -> None:
    bounds = required_discount(problem)
    report.sections["fixed_point"] = state.to_dict()
    report.sections["discount_bounds"] = bounds.to_dict()
    report.checks.append(Check("fixed-point-converged", state.converged, state.errors[-1],
                               detail=f"{state.iterations} iterations, rate {state.rate}"))
    rate_ok = state.rate is not None and state.rate < 1
    severity = HARD if bounds.meets_r1 and bounds.meets_r2 else WARNING
    report.checks.append(Check("fixed-point-rate", rate_ok, state.rate, 1.0, severity))


@dataclass
class _Stage:
    problem: Any
    lattice: Any
    solution: Any
    state: Any


def _solve_stage(config: RunConfig, command: str, clock: _Clock) -> tuple[SolveReport, _Stage | None]:
    report = SolveReport(command, config.data)
    problem = config.problem()
    validation = validate_assumptions(problem, seed=config.seed)
    report.sections["validation"] = validation.to_dict()
    for chk in validation.failures:
        report.checks.append(Check(f"assumption:{chk.name}", False, chk.witness, detail=chk.message))
    if not validation.ok:
        return report, None

    backend = config.solver["backend"]
    lattice = config.penalty_lattice() if backend == PENALIZATION else config.lattice()
    report.sections["lattice"] = _lattice_info(lattice)
    sol, state = _solve(config, problem, lattice, clock)
    report.sections["solution"] = {"backend": sol.backend, "y0": sol.y0, "z0": sol.z0}
    _solution_checks(problem, lattice, sol, report)
    if state is not None:
        _coupling_checks(problem, state, report)

    if backend == PROJECTION and not problem.drivers.cross_y:
        oracle = clock.run("oracle", oracle_value, problem, lattice, 1, config.oracle["switch_budget"])
        delta = float(np.max(np.abs(oracle.value0 - sol.y0)))
        report.sections["oracle"] = {**oracle.to_dict(), "delta": delta}
        tol = config.oracle["oracle_tol"]
        report.checks.append(Check("oracle-agreement", delta <= tol, delta, tol))
        report.checks.append(Check("oracle-stabilized", oracle.stabilized, oracle.stabilization_budget))
    return report, _Stage(problem, lattice, sol, state)


def cmd_solve(config: RunConfig, *, timing: bool = False) -> SolveReport:
    """Validate, build the lattice, solve, and collect diagnostics."""
    clock = _Clock()
    report, report.stage = _solve_stage(config, "solve", clock)
    if timing:
        report.timing = clock.marks
    return report


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _penalty_battery(config: RunConfig, problem, base_y0, report: SolveReport, clock: _Clock) -> None:
    s = config.solver
    lattice = config.penalty_lattice()
    driver, y_dep = None, None
    if problem.drivers.cross_y:
        _, state = clock.run("fixed_point_fine", fixed_point_solve, problem, lattice,
                             s["fixed_point_tol"], s["max_iters"])
        driver, y_dep = frozen_driver(problem, state.gamma), problem.drivers.own_y
    sol = clock.run("penalization", solve_reflected, problem, lattice, PENALIZATION, s["penalty_schedule"],
                    driver=driver, y_dependent=y_dep)
    levels = sol.penalty.levels
    report.sections["penalization"] = {"lattice": _lattice_info(lattice), "y0": sol.y0,
                                       "trace": sol.penalty.to_dict()}

    if len(levels) >= 3:
        decay = penalty_decay_check(sol.penalty, DECAY_BAND)
        report.checks.append(Check("penalty-decay", decay.passed, decay.scaled, DECAY_BAND, detail=decay.reason))
    gaps = [lv.monotone_gap for lv in levels[1:]]
    worst_gap = max(gaps, default=0.0)
    report.checks.append(Check("penalty-monotone", worst_gap <= 1e-10, worst_gap, 1e-10))
    excl = max(lv.exclusivity for lv in levels)
    report.checks.append(Check("penalty-exclusivity", excl == 0.0, excl, 0.0))
    skor = np.array([lv.skorokhod for lv in levels])
    nonincreasing = bool(np.all(np.diff(skor, axis=0) <= 1e-12))
    report.checks.append(Check("penalty-skorokhod-nonincreasing", nonincreasing, skor[:, :].max(axis=1)))
    report.checks.append(Check("penalty-skorokhod", float(skor[-1].max()) <= PENALTY_SKOROKHOD_TOL,
                               float(skor[-1].max()), PENALTY_SKOROKHOD_TOL))
    sups = [lv.sup_violation for lv in levels]
    shrinking = sups[-1] <= sups[0]
    report.checks.append(Check("penalty-obstacle", shrinking and sups[-1] <= PENALTY_OBSTACLE_TOL, sups,
                               PENALTY_OBSTACLE_TOL))
    delta = float(np.max(np.abs(sol.y0 - base_y0)))
    limit = backend_agreement_tol(levels[-1].n)
    report.checks.append(Check("backend-agreement", delta <= limit, delta, limit))


def cmd_verify(config: RunConfig, *, timing: bool = False) -> SolveReport:
    """Full diagnostic battery: the solve checks, representation, penalization and contraction."""
    clock = _Clock()
    base = config.with_overrides(solver__backend=PROJECTION)
    report, stage = _solve_stage(base, "verify", clock)
    report.config = config.data
    if stage is None:
        return report
    problem, lattice, sol, state = stage.problem, stage.lattice, stage.solution, stage.state
    o = config.oracle

    strategies = random_strategies(problem, lattice, o["strategy_samples"], seed=config.seed)
    rep = clock.run("representation", representation_check, problem, lattice, sol, strategies,
                    tol=o["representation_tol"], oracle_tol=o["oracle_tol"], switch_budget=o["switch_budget"])
    report.sections["representation"] = rep.to_dict()
    exact = rep.regime == EXACT
    report.checks.append(Check("representation-domination", rep.dominated, rep.max_excess, rep.tol))
    report.checks.append(Check("representation-oracle", rep.oracle_ok, rep.oracle_delta, rep.oracle_tol,
                               HARD if exact else WARNING))
    report.checks.append(Check("representation-attainment", rep.attained, rep.attainment_delta, rep.oracle_tol,
                               HARD if exact else WARNING))
    report.checks.append(Check("oracle-stabilization", rep.oracle_stabilized, rep.stabilization_budget,
                               severity=HARD if exact else WARNING))

    if state is not None:
        bounds = required_discount(problem)
        probe = clock.run("probe", contraction_probe, problem, lattice, o["probe_pairs"], config.seed,
                          workers=thread_count())
        report.sections["contraction_probe"] = probe.to_dict()
        severity = HARD if bounds.meets_r1 and bounds.meets_r2 else WARNING
        report.checks.append(Check("contraction-probe", probe.max_ratio < 1, probe.max_ratio, 1.0, severity))
        again = apply_phi(problem, lattice, sol.Y)
        resid = weighted_norm(field_difference(again.Y, sol.Y), lattice)
        limit = 10 * config.solver["fixed_point_tol"]
        report.checks.append(Check("fixed-point-residual", resid <= limit, resid, limit))

    _penalty_battery(config, problem, sol.y0, report, clock)
    if timing:
        report.timing = clock.marks
    return report


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    m: int
    rows: list[dict]

    def to_csv(self) -> str:
        cols = (["level", "steps", "dt"] + [f"y0_{i}" for i in range(1, self.m + 1)]
                + [f"z0_{i}" for i in range(1, self.m + 1)] + ["delta", "order"])
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: ("" if row[k] is None else repr(row[k])) for k in cols})
        return buf.getvalue()


def cmd_convergence(config: RunConfig, levels: int) -> ConvergenceTable:
    """Re-solve with the step count doubled per level; deltas are max |Y0 change| over modes."""
    if levels < 2:
        raise ValueError("a convergence study needs at least 2 levels")
    problem = config.problem()
    validate_assumptions(problem, seed=config.seed).raise_if_failed()
    penal = config.solver["backend"] == PENALIZATION
    base = config.penalty_lattice().steps if penal else config.lattice().steps
    clock = _Clock()
    rows, prev, prev_delta = [], None, None
    for level in range(levels):
        cfg = config.with_overrides(lattice__steps=base * 2**level)
        lattice = cfg.penalty_lattice() if penal else cfg.lattice()
        sol, _ = _solve(cfg, problem, lattice, clock)
        y0, z0 = sol.y0, sol.z0
        delta = None if prev is None else float(np.max(np.abs(y0 - prev)))
        order = None
        if delta is not None and prev_delta is not None and delta > 0 and prev_delta > 0:
            order = math.log2(prev_delta / delta)
        row = {"level": level, "steps": lattice.steps, "dt": lattice.dt, "delta": delta, "order": order}
        row.update({f"y0_{i + 1}": float(v) for i, v in enumerate(y0)})
        row.update({f"z0_{i + 1}": float(v) for i, v in enumerate(z0)})
        rows.append(row)
        prev, prev_delta = y0, delta
    return ConvergenceTable(problem.m, rows)


def value_table_csv(solution, lattice) -> str:
    """step, time, node, state, then Y per mode: one row per lattice node."""
    m = solution.m
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "time", "node", "x"] + [f"y_{i}" for i in range(1, m + 1)])
    for k, t in enumerate(lattice.grid.times):
        for node in range(lattice.node_counts[k]):
            writer.writerow([k, repr(float(t)), node, repr(float(lattice.states[k][node, 0]))]
                            + [repr(float(v)) for v in solution.Y[k][:, node]])
    return buf.getvalue()
