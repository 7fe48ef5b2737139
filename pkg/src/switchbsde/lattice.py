"""Truncated time grid and recombining Brownian lattices.

The tree's Brownian increment dB drives both the state X and the stochastic
integral of every backward equation, so conditional expectations on the
lattice are exact sums over branches.

Branch tables
-------------
deterministic-path : one branch, p = 1, dB = 0
recombining-binomial : dB = -sqrt(dt), +sqrt(dt) with p = 1/2 each
recombining-trinomial : dB = -h, 0, +h with h = sqrt(3 dt), p = 1/6, 2/3, 1/6

On trees the state is X_t = x0 + int_0^t mu(s) ds + sigma(t) B_t (or x0 times
the exponential of that when ``geometric``), which recombines for any
time-dependent drift and volatility evaluators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

DETERMINISTIC = "deterministic-path"
BINOMIAL = "recombining-binomial"
TRINOMIAL = "recombining-trinomial"
KINDS = (DETERMINISTIC, BINOMIAL, TRINOMIAL)

# exact path enumeration is used by weighted norms up to this many paths
MAX_ENUMERATED_PATHS = 600_000


def truncate_horizon(r: float, driver_bound: float, tail_tolerance: float) -> float:
    """Smallest T with exp(-r T) * B_f / r <= tail_tolerance.

    Beyond T the discounted driver integral is below the tolerance, so a zero
    terminal value at T is accurate to ``tail_tolerance``.
    """
    if not (r > 0 and driver_bound > 0 and tail_tolerance > 0):
        raise ValueError("discount, driver bound and tail tolerance must all be positive")
    return max(0.0, math.log(driver_bound / (r * tail_tolerance)) / r)


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int
    discount: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if not self.discount > 0:
            raise ValueError("discount must be positive")

    @classmethod
    def from_step(cls, horizon: float, dt: float, discount: float) -> "TimeGrid":
        """Grid over [0, horizon] with the largest step not exceeding ``dt``."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        steps = max(1, math.ceil(horizon / dt - 1e-9))
        return cls(float(horizon), steps, float(discount))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def discount_weights(self) -> np.ndarray:
        return np.exp(-self.discount * self.times)


def _as_time_fn(value) -> Callable[[float], float]:
    if callable(value):
        return value
    const = float(value)
    return lambda t: const


@dataclass(frozen=True)
class StateModelSpec:
    """State model for X.

    ``path`` (deterministic kind only) overrides the default path
    x0 + int mu; it maps t to a vector of length ``dim``.
    """

    kind: str = DETERMINISTIC
    x0: tuple[float, ...] = (0.0,)
    drift: float | Callable[[float], float] = 0.0
    volatility: float | Callable[[float], float] = 0.0
    geometric: bool = False
    path: Callable[[float], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown state kind {self.kind!r}; expected one of {KINDS}")
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        object.__setattr__(self, "x0", x0)
        if self.kind != DETERMINISTIC and len(x0) != 1:
            raise ValueError("tree state models carry a one-dimensional state")
        if self.path is not None and self.kind != DETERMINISTIC:
            raise ValueError("an explicit path is only meaningful for the deterministic kind")

    @property
    def dim(self) -> int:
        if self.path is not None:
            return int(np.atleast_1d(self.path(0.0)).size)
        return len(self.x0)

    def _drift_integral(self, times: np.ndarray) -> np.ndarray:
        mu = _as_time_fn(self.drift)
        if not callable(self.drift):
            return mu(0.0) * times
        out = np.zeros_like(times)
        # left Riemann sum on the grid; exact for piecewise-constant drift
        vals = np.array([mu(t) for t in times[:-1]])
        out[1:] = np.cumsum(vals * np.diff(times))
        return out

    def _map(self, base: np.ndarray) -> np.ndarray:
        x0 = np.asarray(self.x0)
        return x0 * np.exp(base) if self.geometric else x0 + base

    def volatility_at(self, t: float) -> float:
        sigma = float(_as_time_fn(self.volatility)(t))
        if sigma < 0:
            raise ValueError(f"volatility evaluator returned {sigma} < 0 at t={t}")
        return sigma

    def sample(self, t: float, rng: np.random.Generator) -> np.ndarray:
        """A plausible state at time t, used for assumption spot checks."""
        if self.path is not None:
            return np.atleast_1d(np.asarray(self.path(t), dtype=float))
        ts = np.linspace(0.0, t, 65)
        drift = self._drift_integral(ts)[-1] if t > 0 else 0.0
        if self.kind == DETERMINISTIC:
            return np.atleast_1d(self._map(np.full(len(self.x0), drift)))
        b = float(np.clip(rng.standard_normal(), -4.0, 4.0)) * math.sqrt(t)
        sigma = self.volatility_at(t)
        base = drift + sigma * b
        if self.geometric:
            base -= 0.5 * sigma * sigma * t
        return np.atleast_1d(self._map(np.array([base])))


@dataclass(frozen=True)
class Lattice:
    """Recombining lattice over a time grid.

    ``children[k]`` has shape (n_k, b): child node indices at step k+1;
    ``probs`` and ``increments`` (length b) are the branch probabilities and
    Brownian increments, identical at every node.  ``states[k]`` has shape
    (n_k, dim) and ``marginals[k]`` holds the node probabilities at step k.
    """

    grid: TimeGrid
    kind: str
    states: tuple[np.ndarray, ...]
    children: tuple[np.ndarray, ...]
    probs: np.ndarray
    increments: np.ndarray
    marginals: tuple[np.ndarray, ...]

    @property
    def steps(self) -> int:
        return self.grid.steps

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def branches(self) -> int:
        return len(self.probs)

    @cached_property
    def node_counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.states)

    @property
    def path_count(self) -> float:
        return float(self.branches) ** self.steps

    def zeros(self, m: int) -> list[np.ndarray]:
        """A field of zeros with shape (m, n_k) per step."""
        return [np.zeros((m, n)) for n in self.node_counts]

    def push_forward(self, step: int, mass: np.ndarray) -> np.ndarray:
        """Distribute per-node masses at ``step`` onto step+1 along the branches."""
        mass = np.asarray(mass, dtype=float)
        out = np.zeros(mass.shape[:-1] + (self.node_counts[step + 1],))
        ch = self.children[step]
        for b, p in enumerate(self.probs):
            np.add.at(out, (..., ch[:, b]), p * mass)
        return out

    def forward_conditional(self, increments: list[np.ndarray]) -> list[np.ndarray]:
        """E[sum_{l<k} increments_l | node at step k] for every step k.

        ``increments[k]`` has shape (..., n_k); the result starts at 0.
        """
        lead = np.shape(increments[0])[:-1]
        out = [np.zeros(lead + (1,))]
        for k in range(self.steps):
            weighted = (out[k] + increments[k]) * self.marginals[k]
            mass_next = self.marginals[k + 1]
            out.append(self.push_forward(k, weighted) / mass_next)
        return out


def build_lattice(spec: StateModelSpec, grid: TimeGrid) -> Lattice:
    """Build the recombining lattice for ``spec`` on ``grid``."""
    n = grid.steps
    dt = grid.dt
    times = grid.times
    drift = spec._drift_integral(times)

    if spec.kind == DETERMINISTIC:
        probs = np.array([1.0])
        incs = np.array([0.0])
        if spec.path is not None:
            states = tuple(np.atleast_1d(np.asarray(spec.path(t), dtype=float))[None, :] for t in times)
        else:
            states = tuple(np.atleast_1d(spec._map(np.full(len(spec.x0), d)))[None, :] for d in drift)
        children = tuple(np.zeros((1, 1), dtype=np.intp) for _ in range(n))
    else:
        if spec.kind == BINOMIAL:
            h = math.sqrt(dt)
            probs = np.array([0.5, 0.5])
            incs = np.array([-h, h])
            width = 1  # node count grows by one per step
        else:
            h = math.sqrt(3.0 * dt)
            probs = np.array([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0])
            incs = np.array([-h, 0.0, h])
            width = 2
        states = []
        children = []
        for k in range(n + 1):
            sigma = spec.volatility_at(times[k])
            j = np.arange(width * k + 1)
            b = (2 * j - k) * h if width == 1 else (j - k) * h
            base = drift[k] + sigma * b
            if spec.geometric:
                base = base - 0.5 * sigma * sigma * times[k]
            states.append(spec._map(base)[:, None])
            if k < n:
                children.append(j[:, None] + np.arange(len(probs))[None, :])
        states = tuple(states)
        children = tuple(children)

    lattice = Lattice(grid, spec.kind, states, children, probs, incs, ())
    marginals = [np.ones(1)]
    for k in range(n):
        marginals.append(lattice.push_forward(k, marginals[k]))
    lattice = Lattice(grid, spec.kind, states, children, probs, incs, tuple(marginals))
    _check_branch_table(lattice)
    return lattice


def _check_branch_table(lattice: Lattice) -> None:
    p, db, dt = lattice.probs, lattice.increments, lattice.dt
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise AssertionError("branch probabilities must be nonnegative and sum to one")
    if abs(p @ db) > 1e-12:
        raise AssertionError("Brownian increments must have zero mean")
    if lattice.kind != DETERMINISTIC and abs(p @ db**2 - dt) > 1e-12:
        raise AssertionError("Brownian increments must have variance dt")


def _check_field(lattice: Lattice, step: int, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not 0 <= step < lattice.steps:
        raise IndexError(f"step {step} outside 0..{lattice.steps - 1}")
    expected = lattice.node_counts[step + 1]
    if values.shape[-1] != expected:
        raise ValueError(f"field has {values.shape[-1]} nodes, step {step + 1} has {expected}")
    return values


def cond_expect(lattice: Lattice, step: int, values: np.ndarray) -> np.ndarray:
    """E[V_{k+1} | node at step k]; leading axes (e.g. modes) are broadcast."""
    values = _check_field(lattice, step, values)
    ch = lattice.children[step]
    out = lattice.probs[0] * values[..., ch[:, 0]]
    for b in range(1, lattice.branches):
        out = out + lattice.probs[b] * values[..., ch[:, b]]
    return out


def cond_expect_with_increment(lattice: Lattice, step: int, values: np.ndarray) -> np.ndarray:
    """E[V_{k+1} dB | node at step k] / dt, the discrete martingale integrand."""
    values = _check_field(lattice, step, values)
    dt = lattice.dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    ch = lattice.children[step]
    out = np.zeros(values.shape[:-1] + (ch.shape[0],))
    for b in range(lattice.branches):
        if lattice.increments[b] != 0.0:
            out = out + lattice.probs[b] * lattice.increments[b] * values[..., ch[:, b]]
    return out / dt
