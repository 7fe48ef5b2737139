"""Fully coupled drivers via the frozen-profile operator and Picard iteration.

``apply_phi`` freezes the cross-mode arguments of every driver at a given
profile Gamma and solves the resulting decoupled reflected system.  Its fixed
point solves the coupled system; ``fixed_point_solve`` iterates it from
Gamma = 0 and measures the error in the discounted sup norm.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lattice import MAX_ENUMERATED_PATHS, Lattice
from .problem import required_discount
from .reflect import PROJECTION, SolutionField, solve_reflected

EXACT_PATHS = "exact-paths"
STEP_SUM_PROXY = "step-sum-proxy"


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, state: "CouplingState"):
        super().__init__(message)
        self.state = state


def _field(values) -> list[np.ndarray]:
    return list(getattr(values, "Y", values))


def norm_method(lattice: Lattice) -> str:
    return EXACT_PATHS if lattice.path_count <= MAX_ENUMERATED_PATHS else STEP_SUM_PROXY


def _path_sup_mean(values: list[np.ndarray], lattice: Lattice) -> float:
    idx = np.zeros(1, dtype=np.intp)
    prob = np.ones(1)
    running = values[0][idx]
    b = lattice.branches
    for k in range(lattice.steps):
        if b > 1:
            idx = lattice.children[k][idx].ravel()
            prob = (prob[:, None] * lattice.probs[None, :]).ravel()
            running = np.repeat(running, b)
        else:
            idx = lattice.children[k][idx, 0]
        running = np.maximum(running, values[k + 1][idx])
    return float(prob @ running)


def weighted_norm(values, lattice: Lattice) -> float:
    """E[sup_k e^{-r t_k} |Y_k|^2]^(1/2) with |.| the Euclidean norm over modes.

    Exact by path enumeration when the lattice has at most
    ``MAX_ENUMERATED_PATHS`` paths; otherwise the upper proxy
    E[sum_k e^{-r t_k} |Y_k|^2]^(1/2) (see :func:`norm_method`).
    """
    ys = _field(values)
    disc = lattice.grid.discount_weights
    sq = [disc[k] * np.sum(np.atleast_2d(y) ** 2, axis=0) for k, y in enumerate(ys)]
    if norm_method(lattice) == EXACT_PATHS:
        return math.sqrt(_path_sup_mean(sq, lattice))
    return math.sqrt(float(sum(s @ w for s, w in zip(sq, lattice.marginals))))


def field_difference(a, b) -> list[np.ndarray]:
    return [x - y for x, y in zip(_field(a), _field(b))]


def frozen_driver(problem, gamma: list[np.ndarray]):
    """Step driver with every cross-mode argument read from ``gamma``.

    A mode's own component stays live when the drivers declare own-y
    dependence; otherwise it is frozen too.
    """
    spec = problem.drivers
    own = spec.own_y

    def driver(k, t, x, y, z):
        g = gamma[k]
        out = np.empty_like(y)
        for i, f in enumerate(spec.evaluators):
            if own:
                args = g.copy()
                args[i] = y[i]
            else:
                args = g
            out[i] = f(t, x, args, z[i])
        return out

    return driver


def apply_phi(problem, lattice: Lattice, gamma, backend: str = PROJECTION, schedule=None) -> SolutionField:
    """Solve the reflected system whose drivers are frozen at ``gamma``."""
    gamma = _field(gamma)
    if len(gamma) != lattice.steps + 1:
        raise ValueError("profile must have one array per time step")
    for g in gamma:
        if not np.isfinite(g).all():
            raise ValueError("profile must be finite")
    return solve_reflected(problem, lattice, backend, schedule,
                           driver=frozen_driver(problem, gamma), y_dependent=problem.drivers.own_y)


def estimate_rate(errors: list[float]) -> float | None:
    """Geometric-fit contraction rate over the last three errors."""
    tail = [e for e in errors[-3:]]
    if not tail:
        return None
    if any(e == 0.0 for e in tail):
        return 0.0
    if len(tail) < 2:
        return None
    slope = np.polyfit(np.arange(len(tail)), np.log(tail), 1)[0]
    return float(np.exp(slope))


@dataclass
class CouplingState:
    gamma: list[np.ndarray]
    iterations: int = 0
    errors: list[float] = field(default_factory=list)
    rate: float | None = None
    converged: bool = False
    norm_method: str = EXACT_PATHS
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "errors": list(self.errors), "rate": self.rate,
                "converged": self.converged, "norm_method": self.norm_method,
                "warnings": list(self.warnings)}


def fixed_point_solve(problem, lattice: Lattice, tol: float = 1e-8, max_iters: int = 30
                      ) -> tuple[SolutionField, CouplingState]:
    """Picard iteration Y <- phi(Y) from zero until ||Y_new - Y||_{2,r} < tol."""
    gamma = lattice.zeros(problem.m)
    state = CouplingState(gamma, norm_method=norm_method(lattice))
    sol = None
    for it in range(1, max_iters + 1):
        sol = apply_phi(problem, lattice, gamma)
        err = weighted_norm(field_difference(sol.Y, gamma), lattice)
        state.errors.append(err)
        state.iterations = it
        gamma = sol.Y
        if err < tol:
            state.converged = True
            break
    state.gamma = gamma
    state.rate = estimate_rate(state.errors)

    bounds = required_discount(problem)
    if state.rate is not None and state.rate >= 1 and not (bounds.meets_r1 and bounds.meets_r2):
        msg = (f"estimated contraction rate {state.rate:.3g} >= 1 with r={problem.discount} "
               f"below the advisory bounds (r1={bounds.r1:.3g}, r2={bounds.r2:.3g})")
        state.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if not state.converged:
        e = state.errors
        if len(e) < 2 or e[-1] >= e[-2]:
            raise ConvergenceError(f"no convergence in {max_iters} iterations; errors {e}", state)
        state.warnings.append(f"stopped after {max_iters} iterations at error {e[-1]:.3g}")
    return sol, state


def phi_distance(problem, lattice: Lattice, gamma_a, gamma_b) -> tuple[float, float]:
    """(||phi(a) - phi(b)||, ||a - b||) in the weighted norm."""
    ya = apply_phi(problem, lattice, gamma_a).Y
    yb = apply_phi(problem, lattice, gamma_b).Y
    return (weighted_norm(field_difference(ya, yb), lattice),
            weighted_norm(field_difference(gamma_a, gamma_b), lattice))


@dataclass
class ProbeResult:
    max_ratio: float
    ratios: list[float]
    skipped: int
    norm_method: str

    def to_dict(self) -> dict:
        return {"max_ratio": self.max_ratio, "ratios": list(self.ratios), "skipped": self.skipped,
                "norm_method": self.norm_method}


def contraction_probe(problem, lattice: Lattice, pairs: int = 10, seed: int = 0,
                      scale: float | None = None, workers: int = 1) -> ProbeResult:
    """Max over random profile pairs of ||phi(a) - phi(b)|| / ||a - b||."""
    rng = np.random.default_rng(seed)
    if scale is None:
        scale = 1.0 + problem.drivers.zero_bound / problem.discount
    m = problem.m
    draws = []
    for _ in range(pairs):
        a = [rng.uniform(-scale, scale, size=(m, n)) for n in lattice.node_counts]
        b = [rng.uniform(-scale, scale, size=(m, n)) for n in lattice.node_counts]
        draws.append((a, b))

    def one(pair):
        return phi_distance(problem, lattice, *pair)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, draws))
    else:
        results = [one(p) for p in draws]
    ratios = [num / den for num, den in results if den > 0]
    return ProbeResult(max(ratios, default=0.0), ratios, len(results) - len(ratios), norm_method(lattice))
