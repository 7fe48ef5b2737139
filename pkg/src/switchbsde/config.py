"""Run configuration: JSON files with documented defaults.

Schema (version 1); every key other than the problem's modes, drivers,
costs and discount has a default::

    {
      "schema_version": 1,
      "name": "two-mode-constant",
      "description": "",
      "problem": {
        "modes": 2,
        "drivers": {"kind": "constant", "values": [2.0, 1.0]},
        "costs": {"kind": "uniform", "value": 0.5},
        "discount": 1.0,
        "assumption_mode": "H2-prime"
      },
      "lattice": {
        "kind": "deterministic-path",      # or recombining-binomial / -trinomial
        "x0": 0.0, "drift": 0.0, "volatility": 0.0, "geometric": false,
        "dt": 0.01,                        # ignored when "steps" is given
        "steps": null,
        "tail_tolerance": 1e-4,            # sets the horizon unless "horizon" is given
        "horizon": null
      },
      "solver": {
        "backend": "projection",           # or penalization
        "penalty_schedule": [1, 2, 4, 8, 16, 32, 64],
        "penalty_safety": 0.9,             # dt * (u + n_max m + r) on the penalization grid
        "fixed_point_tol": 1e-8,
        "max_iters": 30
      },
      "oracle": {
        "switch_budget": null,             # null means m
        "strategy_samples": 50,
        "probe_pairs": 10,
        "representation_tol": 1e-8,
        "oracle_tol": 1e-6
      },
      "seed": 0
    }

Driver and cost forms are listed in :mod:`switchbsde.registry`.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .lattice import KINDS, Lattice, StateModelSpec, TimeGrid, build_lattice, truncate_horizon
from .problem import H2, H2_PRIME, ModeSet, SwitchingProblem
from .reflect import PENALIZATION, PROJECTION
from .registry import ConfigError, _number, build_costs, build_drivers

SCHEMA_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "name": None,
    "description": "",
    "problem": {"assumption_mode": H2_PRIME},
    "lattice": {
        "kind": "deterministic-path",
        "x0": 0.0,
        "drift": 0.0,
        "volatility": 0.0,
        "geometric": False,
        "dt": 0.01,
        "steps": None,
        "tail_tolerance": 1e-4,
        "horizon": None,
    },
    "solver": {
        "backend": PROJECTION,
        "penalty_schedule": [1, 2, 4, 8, 16, 32, 64],
        "penalty_safety": 0.9,
        "fixed_point_tol": 1e-8,
        "max_iters": 30,
    },
    "oracle": {
        "switch_budget": None,
        "strategy_samples": 50,
        "probe_pairs": 10,
        "representation_tol": 1e-8,
        "oracle_tol": 1e-6,
    },
    "seed": 0,
}

REQUIRED_PROBLEM_KEYS = ("modes", "drivers", "costs", "discount")


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    allowed = set(defaults) | (set(REQUIRED_PROBLEM_KEYS) if path == "problem" else set())
    for key, value in given.items():
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"{where}: unknown field")
        if isinstance(defaults.get(key), dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            out[key] = _merge(defaults[key], value, key)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _integer(value, path: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{path}: must be at least {minimum}")
    return value


@dataclass(frozen=True)
class RunConfig:
    """A parsed, fully defaulted configuration.  ``data`` is the resolved JSON object."""

    data: dict

    @classmethod
    def from_dict(cls, raw: Any) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration root must be a JSON object")
        data = _merge(DEFAULTS, raw, "")
        cfg = cls(data)
        cfg._check()
        return cfg

    @classmethod
    def from_json(cls, text: str, source: str = "<config>") -> "RunConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
        return cls.from_json(text, str(path))

    # -- validation ---------------------------------------------------------

    def _check(self) -> None:
        d = self.data
        if d["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {d['schema_version']!r}")
        p = d["problem"]
        for key in REQUIRED_PROBLEM_KEYS:
            if key not in p:
                raise ConfigError(f"problem.{key}: required field missing")
        _integer(p["modes"], "problem.modes", 1)
        _number(p["discount"], "problem.discount", positive=True)
        if p["assumption_mode"] not in (H2, H2_PRIME):
            raise ConfigError(f"problem.assumption_mode: expected {H2!r} or {H2_PRIME!r}")

        lat = d["lattice"]
        if lat["kind"] not in KINDS:
            raise ConfigError(f"lattice.kind: expected one of {list(KINDS)}")
        for key in ("x0", "drift"):
            _number(lat[key], f"lattice.{key}")
        _number(lat["volatility"], "lattice.volatility", nonnegative=True)
        _number(lat["dt"], "lattice.dt", positive=True)
        _number(lat["tail_tolerance"], "lattice.tail_tolerance", positive=True)
        if lat["steps"] is not None:
            _integer(lat["steps"], "lattice.steps", 1)
        if lat["horizon"] is not None:
            _number(lat["horizon"], "lattice.horizon", positive=True)
        if not isinstance(lat["geometric"], bool):
            raise ConfigError("lattice.geometric: expected true or false")

        s = d["solver"]
        if s["backend"] not in (PROJECTION, PENALIZATION):
            raise ConfigError(f"solver.backend: expected {PROJECTION!r} or {PENALIZATION!r}")
        sched = s["penalty_schedule"]
        if not isinstance(sched, list) or len(sched) < 1:
            raise ConfigError("solver.penalty_schedule: expected a nonempty list")
        vals = [_number(v, f"solver.penalty_schedule[{i}]", positive=True) for i, v in enumerate(sched)]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("solver.penalty_schedule: must be strictly increasing")
        safety = _number(s["penalty_safety"], "solver.penalty_safety", positive=True)
        if safety >= 1:
            raise ConfigError("solver.penalty_safety: must be below 1")
        _number(s["fixed_point_tol"], "solver.fixed_point_tol", positive=True)
        _integer(s["max_iters"], "solver.max_iters", 1)

        o = d["oracle"]
        if o["switch_budget"] is not None:
            _integer(o["switch_budget"], "oracle.switch_budget", 0)
        _integer(o["strategy_samples"], "oracle.strategy_samples", 0)
        _integer(o["probe_pairs"], "oracle.probe_pairs", 0)
        _number(o["representation_tol"], "oracle.representation_tol", positive=True)
        _number(o["oracle_tol"], "oracle.oracle_tol", positive=True)
        _integer(d["seed"], "seed", 0)

        # building the problem surfaces driver / cost parameter errors now
        self.problem()

    # -- accessors ----------------------------------------------------------

    @property
    def name(self) -> str:
        return self.data["name"] or "unnamed"

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def solver(self) -> dict:
        return self.data["solver"]

    @property
    def oracle(self) -> dict:
        return self.data["oracle"]

    def with_overrides(self, **changes) -> "RunConfig":
        """Copy with top-level keys or dotted section keys replaced (``lattice__steps=...``)."""
        data = copy.deepcopy(self.data)
        for key, value in changes.items():
            if "__" in key:
                section, field = key.split("__", 1)
                data[section][field] = value
            else:
                data[key] = value
        return RunConfig.from_dict(data)

    def state_model(self) -> StateModelSpec:
        lat = self.data["lattice"]
        return StateModelSpec(lat["kind"], (float(lat["x0"]),), float(lat["drift"]), float(lat["volatility"]),
                              lat["geometric"])

    def problem(self) -> SwitchingProblem:
        p = self.data["problem"]
        m = p["modes"]
        try:
            return SwitchingProblem(ModeSet(m), build_drivers(p["drivers"], m), build_costs(p["costs"], m),
                                    float(p["discount"]), self.state_model(), p["assumption_mode"])
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"problem: {exc}") from None

    def horizon(self) -> float:
        lat = self.data["lattice"]
        if lat["horizon"] is not None:
            return float(lat["horizon"])
        prob = self.problem()
        bound = prob.drivers.zero_bound
        if bound == 0:
            return 1.0  # zero drivers: any horizon gives the exact (zero) solution
        return truncate_horizon(prob.discount, bound, lat["tail_tolerance"])

    def grid(self, refine: int = 0) -> TimeGrid:
        lat = self.data["lattice"]
        r = float(self.data["problem"]["discount"])
        T = self.horizon()
        steps = lat["steps"] if lat["steps"] is not None else TimeGrid.from_step(T, lat["dt"], r).steps
        return TimeGrid(T, steps * 2**refine, r)

    def lattice(self, refine: int = 0) -> Lattice:
        return build_lattice(self.state_model(), self.grid(refine))

    def penalty_grid(self) -> TimeGrid:
        """Base grid refined until dt (u + n_max m + r) <= penalty_safety."""
        prob = self.problem()
        base = self.grid()
        s = self.solver
        rate = prob.drivers.lipschitz.sup + max(s["penalty_schedule"]) * prob.m + prob.discount
        dt = min(base.dt, s["penalty_safety"] / rate)
        steps = max(base.steps, math.ceil(base.horizon / dt - 1e-9))
        return TimeGrid(base.horizon, steps, base.discount)

    def penalty_lattice(self) -> Lattice:
        return build_lattice(self.state_model(), self.penalty_grid())


def preset_names() -> list[str]:
    root = resources.files("switchbsde") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> RunConfig:
    root = resources.files("switchbsde") / "presets"
    target = root / f"{name}.json"
    if not target.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return RunConfig.from_json(target.read_text(), f"preset {name}")


def resolve_config(ref: str) -> RunConfig:
    """A path to a JSON file, or the name of a bundled preset."""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        return RunConfig.load(path)
    return load_preset(ref)
