"""Backward induction for plain (non-reflected) BSDEs on a lattice.

One step of the scheme, per node, in undiscounted form::

    Z_k = E[Y_{k+1} dB] / dt
    Y_k = E[Y_{k+1}] + dt * (f(t_k, X_k, Y_k, Z_k) - r Y_k)

The scheme is explicit in Z and implicit in Y.  The implicit equation is
solved by Picard iteration on the driver, with the linear part
(1 + r dt) Y moved to the left; a ``resolvent`` hook lets the reflection
module replace that linear solve by a penalized one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lattice import Lattice, cond_expect, cond_expect_with_increment

INNER_TOL = 1e-12
INNER_MAX_ITER = 50

# step driver: (k, t, x, Y, Z) -> (m, nodes), with Y and Z of shape (m, nodes)
StepDriver = Callable[[int, float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
# resolvent: (b, guess) -> Y solving (1 + r dt) Y - penalty(Y) = b
Resolvent = Callable[[np.ndarray, np.ndarray], np.ndarray]


class StepSizeError(ValueError):
    """The time step is too large for the inner fixed point to contract."""


class InnerIterationError(RuntimeError):
    """A per-node fixed point failed to converge."""


@dataclass
class BsdeField:
    """Discrete (Y, Z): ``Y[k]`` and ``Z[k]`` have shape (m, n_k)."""

    Y: list[np.ndarray]
    Z: list[np.ndarray]

    @property
    def m(self) -> int:
        return self.Y[0].shape[0]

    @property
    def y0(self) -> np.ndarray:
        return self.Y[0][:, 0].copy()

    @property
    def z0(self) -> np.ndarray:
        return self.Z[0][:, 0].copy()

    def is_finite(self) -> bool:
        return all(np.isfinite(y).all() for y in self.Y) and all(np.isfinite(z).all() for z in self.Z)


def as_step_driver(driver) -> StepDriver:
    """Adapt a DriverSpec or a callable f(t, x, Y, Z) -> (m, nodes)."""
    evaluate = getattr(driver, "evaluate", driver)
    return lambda k, t, x, y, z: evaluate(t, x, y, z)


def check_step_size(lattice: Lattice, lipschitz_sup: float, r: float, extra: float = 0.0) -> None:
    """Require dt * (u + extra + r) < 1."""
    q = lattice.dt * (lipschitz_sup + extra + r)
    if not q < 1.0:
        raise StepSizeError(
            f"dt={lattice.dt:.6g} too large: dt*(u + {extra:g} + r) = {q:.4g} >= 1; refine the grid"
        )


def implicit_step(
    driver: StepDriver,
    k: int,
    t: float,
    x: np.ndarray,
    ey: np.ndarray,
    z: np.ndarray,
    dt: float,
    r: float,
    *,
    y_dependent: bool = True,
    resolvent: Resolvent | None = None,
    guess: np.ndarray | None = None,
    tol: float = INNER_TOL,
    max_iter: int = INNER_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve Y = ey + dt (f(Y, z) - r Y) [+ penalty] at every node of step k.

    Returns ``(Y, f)`` with f the driver value at the last Picard iterate.
    """
    scale = 1.0 + r * dt
    y = ey if guess is None else guess
    for _ in range(max_iter):
        f = driver(k, t, x, y, z)
        b = ey + dt * f
        y_new = b / scale if resolvent is None else resolvent(b, y)
        if not y_dependent:
            return y_new, f
        err = np.max(np.abs(y_new - y), initial=0.0)
        y = y_new
        if err <= tol * (1.0 + np.max(np.abs(y), initial=0.0)):
            return y, driver(k, t, x, y, z)
    raise InnerIterationError(f"inner fixed point at step {k} did not converge in {max_iter} iterations")


def solve_bsde(problem, lattice: Lattice, driver=None, terminal: np.ndarray | None = None,
               *, y_dependent: bool | None = None) -> BsdeField:
    """Solve the mode-vector BSDE with driver ``driver`` (default: the problem's).

    ``driver`` may be a DriverSpec or any callable f(t, x, Y, Z) returning an
    (m, nodes) array.  Terminal values default to zero.
    """
    spec = problem.drivers
    m = problem.m
    if driver is None:
        driver = spec
    if y_dependent is None:
        y_dependent = getattr(driver, "y_dependent", True)
    u = spec.lipschitz.sup if driver is spec else getattr(getattr(driver, "lipschitz", None), "sup", 0.0)
    r = problem.discount
    check_step_size(lattice, u, r)
    step_driver = as_step_driver(driver)

    n = lattice.steps
    y_next = np.zeros((m, lattice.node_counts[n])) if terminal is None else np.array(terminal, dtype=float)
    if y_next.shape != (m, lattice.node_counts[n]):
        raise ValueError(f"terminal field must have shape {(m, lattice.node_counts[n])}")
    if not np.isfinite(y_next).all():
        raise ValueError("terminal field must be finite")
    Y = [None] * (n + 1)
    Z = [None] * (n + 1)
    Y[n] = y_next
    Z[n] = np.zeros_like(y_next)
    times = lattice.grid.times
    for k in range(n - 1, -1, -1):
        ey = cond_expect(lattice, k, Y[k + 1])
        z = cond_expect_with_increment(lattice, k, Y[k + 1])
        Y[k], _ = implicit_step(step_driver, k, times[k], lattice.states[k], ey, z,
                                lattice.dt, r, y_dependent=y_dependent)
        Z[k] = z
    return BsdeField(Y, Z)
