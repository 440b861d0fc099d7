"""YAML experiment configs.

Schema (all blocks optional unless a subcommand needs them)::

    problem:                    # or `problems:` - a list of such blocks, each with `name`
      terminal:  {kind: put, strike: 0.0}     # quadratic | put | call | constant | linear
      generator: {kind: constant, c: 1.0}     # zero | constant | linear | abs_z
      obstacle:  {kind: constant, c: 0.0}     # constant | linear
    band: {sigma_lo_sq: 1.0, sigma_hi_sq: 2.0}
    grid: {T: 1.0, n_steps: 200, coverage_sigmas: 6.0}
    penalty: {n_list: [4, 8, 16]}             # or n_start, n_factor, n_max; plus tol
    mc: {n_paths: 100000, seed: 0, n_steps: 100, policies: [...]}
    compare: {n_draws: 50, seed: 0}
    checks: [rate_slope, uniform_bounds]

A bare string such as ``terminal: put`` selects a built-in with default
parameters. Every validation error names the offending key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .core_model import ProblemSpec, VolatilityBand
from .montecarlo import (VolatilityPolicy, constant_policy, lattice_feedback_policy, table_policy)
from .problems import GENERATORS, OBSTACLES, TERMINALS, make_spec

DEFAULT_SCHEDULE = [4, 8, 16, 32, 64, 128, 256, 512]


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


def _get(block: dict, key: str, path: str, default=..., kind=float):
    if key not in block:
        if default is ...:
            raise ConfigError(f"{path}.{key}" if path else key, "missing")
        return default
    val = block[key]
    try:
        if kind is int:
            if isinstance(val, bool) or int(val) != val:
                raise ValueError
            return int(val)
        if kind is float:
            if isinstance(val, bool):
                raise ValueError
            out = float(val)
            if not math.isfinite(out):
                raise ValueError
            return out
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected {kind.__name__}, got {val!r}") from None


def _mapping(cfg: dict, key: str, required: bool = False) -> dict:
    val = cfg.get(key)
    if val is None:
        if required:
            raise ConfigError(key, "missing")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(key, f"expected a mapping, got {type(val).__name__}")
    return val


def _builtin(entry: Any, registry: dict, path: str):
    if isinstance(entry, str):
        kind, params = entry, {}
    elif isinstance(entry, dict):
        if "kind" not in entry:
            raise ConfigError(f"{path}.kind", "missing")
        params = {k: v for k, v in entry.items() if k != "kind"}
        kind = entry["kind"]
    else:
        raise ConfigError(path, f"expected a built-in name or mapping, got {entry!r}")
    if kind not in registry:
        raise ConfigError(f"{path}.kind", f"unknown built-in {kind!r}; choose from {sorted(registry)}")
    for k, v in params.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}.{k}", f"expected a number, got {v!r}")
    try:
        return registry[kind](**{k: float(v) for k, v in params.items()})
    except TypeError:
        raise ConfigError(path, f"unexpected parameters {sorted(params)} for {kind!r}") from None


@dataclass
class ProblemConfig:
    name: str
    terminal: Any
    generator: Any
    obstacle: Any
    raw: dict


@dataclass
class PenaltyConfig:
    n_list: list[float]
    tol: float = 1e-3


@dataclass
class MCConfig:
    n_paths: int = 100_000
    seed: int = 0
    n_steps: int = 100
    policies: list[dict] = field(default_factory=list)


@dataclass
class Config:
    band: Optional[VolatilityBand]
    T: float
    n_steps: int
    coverage_sigmas: float
    problems: list[ProblemConfig]
    penalty: PenaltyConfig
    mc: MCConfig
    compare: dict
    checks: Optional[list[str]]
    raw: dict

    def spec(self, problem: ProblemConfig, n_steps: Optional[int] = None) -> ProblemSpec:
        if self.band is None:
            raise ConfigError("band", "missing")
        return make_spec(self.band.sigma_lo_sq, self.band.sigma_hi_sq, self.T, n_steps or self.n_steps,
                         problem.terminal, problem.generator, problem.obstacle, self.coverage_sigmas,
                         name=problem.name)

    def require_problem(self) -> ProblemConfig:
        if not self.problems:
            raise ConfigError("problem", "missing")
        return self.problems[0]

    def policies(self, spec: ProblemSpec, terminal) -> list[VolatilityPolicy]:
        band = spec.band
        entries = self.mc.policies or [{"kind": "constant", "value": band.sigma_lo_sq},
                                       {"kind": "constant", "value": band.sigma_hi_sq},
                                       {"kind": "lattice_feedback"}]
        out = []
        for k, e in enumerate(entries):
            path = f"mc.policies[{k}]"
            if not isinstance(e, dict) or "kind" not in e:
                raise ConfigError(path, "expected a mapping with 'kind'")
            kind = e["kind"]
            if kind == "constant":
                out.append(constant_policy(_get(e, "value", path)))
            elif kind == "table":
                times, values = e.get("times"), e.get("values")
                if not isinstance(times, list) or not isinstance(values, list):
                    raise ConfigError(f"{path}.times", "table policy needs lists 'times' and 'values'")
                try:
                    out.append(table_policy(times, values))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(path, str(exc)) from None
            elif kind == "lattice_feedback":
                out.append(lattice_feedback_policy(terminal, spec))
            else:
                raise ConfigError(f"{path}.kind", f"unknown policy {kind!r}; choose from "
                                                  "['constant', 'lattice_feedback', 'table']")
            try:
                out[-1].validate(band)
            except ValueError as exc:
                raise ConfigError(path, str(exc)) from None
        return out


def _parse_problem(block: Any, path: str, default_name: str) -> ProblemConfig:
    if not isinstance(block, dict):
        raise ConfigError(path, "expected a mapping")
    if "terminal" not in block:
        raise ConfigError(f"{path}.terminal", "missing")
    terminal = _builtin(block["terminal"], TERMINALS, f"{path}.terminal")
    generator = _builtin(block["generator"], GENERATORS, f"{path}.generator") if "generator" in block else None
    obstacle = _builtin(block["obstacle"], OBSTACLES, f"{path}.obstacle") if "obstacle" in block else None
    return ProblemConfig(str(block.get("name", default_name)), terminal, generator, obstacle, block)


def _parse_penalty(block: dict) -> PenaltyConfig:
    tol = _get(block, "tol", "penalty", 1e-3)
    if tol <= 0:
        raise ConfigError("penalty.tol", f"must be > 0, got {tol}")
    if "n_list" in block:
        ns = block["n_list"]
        if not isinstance(ns, list) or not ns:
            raise ConfigError("penalty.n_list", "expected a nonempty list")
        try:
            ns = [float(n) for n in ns]
        except (TypeError, ValueError):
            raise ConfigError("penalty.n_list", "entries must be numbers") from None
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("penalty.n_list", "n_list must be strictly increasing")
        return PenaltyConfig(ns, tol)
    if any(k in block for k in ("n_start", "n_factor", "n_max")):
        start = _get(block, "n_start", "penalty")
        factor = _get(block, "n_factor", "penalty")
        n_max = _get(block, "n_max", "penalty")
        if start <= 0:
            raise ConfigError("penalty.n_start", "must be > 0")
        if factor <= 1:
            raise ConfigError("penalty.n_factor", "must be > 1")
        ns = []
        n = start
        while n <= n_max * (1 + 1e-12):
            ns.append(n)
            n *= factor
        if not ns:
            raise ConfigError("penalty.n_max", "must be >= n_start")
        return PenaltyConfig(ns, tol)
    return PenaltyConfig([float(n) for n in DEFAULT_SCHEDULE], tol)


def parse_config(cfg: Any) -> Config:
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a mapping")
    band_b = _mapping(cfg, "band")
    band = None
    if band_b:
        lo = _get(band_b, "sigma_lo_sq", "band")
        hi = _get(band_b, "sigma_hi_sq", "band")
        try:
            band = VolatilityBand(lo, hi)
        except ValueError as exc:
            raise ConfigError("band.sigma_lo_sq" if lo <= 0 else "band.sigma_hi_sq", str(exc)) from None
    grid_b = _mapping(cfg, "grid")
    T = _get(grid_b, "T", "grid", 1.0)
    if T <= 0:
        raise ConfigError("grid.T", f"must be > 0, got {T}")
    n_steps = _get(grid_b, "n_steps", "grid", 200, int)
    if n_steps < 1:
        raise ConfigError("grid.n_steps", f"must be >= 1, got {n_steps}")
    coverage = _get(grid_b, "coverage_sigmas", "grid", 6.0)
    if coverage < 1:
        raise ConfigError("grid.coverage_sigmas", f"must be >= 1, got {coverage}")

    problems = []
    if "problem" in cfg and "problems" in cfg:
        raise ConfigError("problems", "give either 'problem' or 'problems', not both")
    if "problem" in cfg:
        problems.append(_parse_problem(cfg["problem"], "problem", "problem"))
    if "problems" in cfg:
        if not isinstance(cfg["problems"], list) or not cfg["problems"]:
            raise ConfigError("problems", "expected a nonempty list")
        problems = [_parse_problem(b, f"problems[{k}]", f"problem{k}") for k, b in enumerate(cfg["problems"])]
        names = [p.name for p in problems]
        if len(set(names)) != len(names):
            raise ConfigError("problems", f"duplicate names {names}")

    penalty = _parse_penalty(_mapping(cfg, "penalty"))
    mc_b = _mapping(cfg, "mc")
    mc = MCConfig(_get(mc_b, "n_paths", "mc", 100_000, int), _get(mc_b, "seed", "mc", 0, int),
                  _get(mc_b, "n_steps", "mc", 100, int), mc_b.get("policies") or [])
    if mc.n_paths < 1000:
        raise ConfigError("mc.n_paths", f"must be >= 1000, got {mc.n_paths}")
    if not isinstance(mc.policies, list):
        raise ConfigError("mc.policies", "expected a list")
    compare = _mapping(cfg, "compare")
    for key in ("n_draws", "seed"):
        if key in compare:
            _get(compare, key, "compare", kind=int)
    checks = cfg.get("checks")
    if checks is not None and (not isinstance(checks, list) or not all(isinstance(c, str) for c in checks)):
        raise ConfigError("checks", "expected a list of check names")
    return Config(band, T, n_steps, coverage, problems, penalty, mc, compare, checks, cfg)


def load_config(path: str) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return parse_config(raw)
