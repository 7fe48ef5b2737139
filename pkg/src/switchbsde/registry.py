"""Named driver and cost forms that configuration files can select.

Each builder receives the form's parameter mapping, the mode count and a
dotted path used in error messages.
"""

from __future__ import annotations

import math
from typing import Any, Callable, Mapping

import numpy as np

from .problem import DriverSpec, LipschitzModulus, SwitchingCostSpec


class ConfigError(ValueError):
    """A configuration value is missing or malformed; the message names the field."""


def _get(params: Mapping[str, Any], key: str, path: str, default=...):
    if key not in params:
        if default is ...:
            raise ConfigError(f"{path}.{key}: required field missing")
        return default
    return params[key]


def _number(value, path: str, *, positive=False, nonnegative=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    if positive and not value > 0:
        raise ConfigError(f"{path}: must be positive")
    if nonnegative and value < 0:
        raise ConfigError(f"{path}: must be nonnegative")
    return value


def _vector(params, key: str, m: int, path: str, default=...) -> np.ndarray:
    value = _get(params, key, path, default)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.full(m, float(value))
    if not isinstance(value, list) or len(value) != m:
        raise ConfigError(f"{path}.{key}: expected a number or a list of {m} numbers")
    return np.array([_number(v, f"{path}.{key}[{i}]") for i, v in enumerate(value)])


def _mean_others(y: np.ndarray, i: int) -> np.ndarray:
    m = y.shape[0]
    return (y.sum(axis=0) - y[i]) / (m - 1)


def _constant(params, m, path):
    c = _vector(params, "values", m, path)
    evaluators = tuple((lambda t, x, y, z, c=ci: np.full(y.shape[-1], c)) for ci in c)
    return DriverSpec(evaluators, LipschitzModulus.zero(), float(np.abs(c).max()))


def _affine(params, m, path):
    """f_i = c_i + 1[t <= window_end] (a_i y^i + b_i z); a missing window means forever."""
    c = _vector(params, "values", m, path)
    a = _vector(params, "y_slope", m, path, 0.0)
    b = _vector(params, "z_slope", m, path, 0.0)
    end = _get(params, "window_end", path, None)
    end = math.inf if end is None else _number(end, f"{path}.window_end", positive=True)

    def make(i):
        def f(t, x, y, z):
            active = 1.0 if t <= end else 0.0
            return c[i] + active * (a[i] * y[i] + b[i] * z)
        return f

    level = float(np.abs(a).max() + np.abs(b).max())
    return DriverSpec(tuple(make(i) for i in range(m)), LipschitzModulus.window(level, end),
                      float(np.abs(c).max()), own_y=bool(np.any(a)), z_dep=bool(np.any(b)))


def _exp_coupling(params, m, path):
    """f_i = c_i + s e^{-lambda t} * mean_{j != i} y^j."""
    if m < 2:
        raise ConfigError(f"{path}: exp-coupling needs at least two modes")
    c = _vector(params, "values", m, path)
    s = _number(_get(params, "strength", path), f"{path}.strength")
    lam = _number(_get(params, "decay", path, 1.0), f"{path}.decay", nonnegative=True)

    def make(i):
        return lambda t, x, y, z: c[i] + s * math.exp(-lam * t) * _mean_others(y, i)

    return DriverSpec(tuple(make(i) for i in range(m)), LipschitzModulus.exponential(abs(s), lam),
                      float(np.abs(c).max()), cross_y=True)


def _difference_coupling(params, m, path):
    """f_i = c_i + s e^{-lambda t} * mean_{j != i}(y^j - y^i).

    Declared without own-y dependence, so the contraction operator freezes
    the whole vector and the driver sees the profile only through differences.
    """
    if m < 2:
        raise ConfigError(f"{path}: difference-coupling needs at least two modes")
    c = _vector(params, "values", m, path)
    s = _number(_get(params, "strength", path), f"{path}.strength")
    lam = _number(_get(params, "decay", path, 1.0), f"{path}.decay", nonnegative=True)

    def make(i):
        return lambda t, x, y, z: c[i] + s * math.exp(-lam * t) * (_mean_others(y, i) - y[i])

    return DriverSpec(tuple(make(i) for i in range(m)), LipschitzModulus.exponential(2 * abs(s), lam),
                      float(np.abs(c).max()), cross_y=True)


def _state_tanh(params, m, path):
    """f_i = c_i + a_i tanh(x)."""
    c = _vector(params, "values", m, path)
    a = _vector(params, "amplitudes", m, path)

    def make(i):
        return lambda t, x, y, z: c[i] + a[i] * np.tanh(x[:, 0])

    return DriverSpec(tuple(make(i) for i in range(m)), LipschitzModulus.zero(),
                      float((np.abs(c) + np.abs(a)).max()))


def _time_exponential(params, m, path):
    """f_i = c_i + a_i e^{-lambda t}."""
    c = _vector(params, "values", m, path)
    a = _vector(params, "amplitudes", m, path)
    lam = _number(_get(params, "rate", path, 1.0), f"{path}.rate", nonnegative=True)

    def make(i):
        return lambda t, x, y, z: np.full(y.shape[-1], c[i] + a[i] * math.exp(-lam * t))

    return DriverSpec(tuple(make(i) for i in range(m)), LipschitzModulus.zero(),
                      float((np.abs(c) + np.abs(a)).max()))


DRIVER_FORMS: dict[str, Callable[..., DriverSpec]] = {
    "constant": _constant,
    "affine": _affine,
    "exp-coupling": _exp_coupling,
    "difference-coupling": _difference_coupling,
    "state-tanh": _state_tanh,
    "time-exponential": _time_exponential,
}


def _cost_matrix(params, m, path) -> np.ndarray:
    raw = _get(params, "matrix", path)
    if not isinstance(raw, list) or len(raw) != m or any(not isinstance(r, list) or len(r) != m for r in raw):
        raise ConfigError(f"{path}.matrix: expected a {m}x{m} list of lists")
    return np.array([[_number(v, f"{path}.matrix[{i}][{j}]") for j, v in enumerate(row)]
                     for i, row in enumerate(raw)])


def _uniform_cost(params, m, path):
    value = _number(_get(params, "value", path), f"{path}.value")
    return SwitchingCostSpec.uniform(m, value)


def _matrix_cost(params, m, path):
    return SwitchingCostSpec.from_matrix(_cost_matrix(params, m, path))


def _state_scaled_cost(params, m, path):
    """g_ij(x) = G_ij (1 + a x^2 / (1 + x^2)), bounded by |G| (1 + a)."""
    mat = _cost_matrix(params, m, path)
    a = _number(_get(params, "scale", path), f"{path}.scale", nonnegative=True)

    def evaluator(x):
        x = np.atleast_2d(x)[:, 0]
        factor = 1.0 + a * x * x / (1.0 + x * x)
        return mat[:, :, None] * factor[None, None, :]

    return SwitchingCostSpec(evaluator, float(np.abs(mat).max(initial=0.0) * (1.0 + a)), m)


COST_FORMS: dict[str, Callable[..., SwitchingCostSpec]] = {
    "uniform": _uniform_cost,
    "matrix": _matrix_cost,
    "state-scaled": _state_scaled_cost,
}


def _build(forms, params, m, path, what):
    if not isinstance(params, Mapping):
        raise ConfigError(f"{path}: expected an object")
    kind = _get(params, "kind", path)
    if kind not in forms:
        raise ConfigError(f"{path}.kind: unknown {what} form {kind!r}; known: {sorted(forms)}")
    return forms[kind](params, m, path)


def build_drivers(params: Mapping[str, Any], m: int, path: str = "problem.drivers") -> DriverSpec:
    return _build(DRIVER_FORMS, params, m, path, "driver")


def build_costs(params: Mapping[str, Any], m: int, path: str = "problem.costs") -> SwitchingCostSpec:
    return _build(COST_FORMS, params, m, path, "cost")
