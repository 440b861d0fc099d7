"""Monte Carlo lower bounds on the G-expectation over volatility policies.

Each policy fixes a classical measure: Euler increments
``B_{i+1} = B_i + sqrt(v_i dt) * eta_i`` with ``v_i`` read from the policy.
The supremum over a finite family is a lower bound for the lattice value,
and equals it (up to noise and discretisation) when the family contains
the optimal feedback.

Determinism: paths are generated in fixed-size blocks, block ``k`` drawing
from ``SeedSequence(seed).spawn(n_blocks)[k]``; block sums are reduced in
block order. Thread count changes only the schedule.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .core_model import DiagnosticsReport, ProblemSpec, VolatilityBand, check
from .sublinear import conditional_g_expectation, g_expectation

MIN_PATHS = 1000
BLOCK_SIZE = 8192
SE_MULTIPLE = 3.0
DISCRETIZATION_ALLOWANCE = 0.02

ANCHOR_REP = "representation: E^[xi] = sup over P of E_P[xi]"
_BAND_SLACK = 1e-12


class PolicyKind(str, Enum):
    CONSTANT = "constant"
    FEEDBACK = "feedback"
    TABLE = "table"


@dataclass(frozen=True)
class VolatilityPolicy:
    """Rule giving the variance rate at each step.

    ``CONSTANT`` uses ``value``; ``FEEDBACK`` uses ``hi`` where
    ``indicator(t, x)`` is true and ``lo`` elsewhere; ``TABLE`` uses
    ``values[k]`` on ``[times[k], times[k+1])``.
    """

    kind: PolicyKind
    value: Optional[float] = None
    indicator: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    times: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    name: str = ""

    def __post_init__(self):
        kind = PolicyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is PolicyKind.CONSTANT and self.value is None:
            raise ValueError("constant policy needs a value")
        if kind is PolicyKind.FEEDBACK and (self.indicator is None or self.lo is None or self.hi is None):
            raise ValueError("feedback policy needs indicator, lo and hi")
        if kind is PolicyKind.TABLE:
            if len(self.times) != len(self.values) or not self.times:
                raise ValueError("table policy needs equally long, nonempty times and values")
            if any(b <= a for a, b in zip(self.times, self.times[1:])):
                raise ValueError("table times must be strictly increasing")

    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind is PolicyKind.CONSTANT:
            return f"constant({self.value:g})"
        return self.kind.value

    def rates(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.kind is PolicyKind.CONSTANT:
            return np.full(x.shape, float(self.value))
        if self.kind is PolicyKind.FEEDBACK:
            on = np.asarray(self.indicator(t, x), dtype=bool)
            return np.where(on, float(self.hi), float(self.lo))
        k = max(0, int(np.searchsorted(self.times, t, side="right")) - 1)
        return np.full(x.shape, float(self.values[k]))

    def validate(self, band: VolatilityBand):
        """Reject parameters outside the band (emitted rates are also checked per step)."""
        for v in self._declared_rates():
            _check_rate(np.array([v]), band, self.label())

    def _declared_rates(self) -> list[float]:
        if self.kind is PolicyKind.CONSTANT:
            return [self.value]
        if self.kind is PolicyKind.FEEDBACK:
            return [self.lo, self.hi]
        return list(self.values)


def _check_rate(v: np.ndarray, band: VolatilityBand, label: str):
    lo = band.sigma_lo_sq * (1 - _BAND_SLACK)
    hi = band.sigma_hi_sq * (1 + _BAND_SLACK)
    if np.any(v < lo) or np.any(v > hi):
        bad = v[(v < lo) | (v > hi)][0]
        raise ValueError(f"policy {label} emits variance rate {bad!r} outside "
                         f"[{band.sigma_lo_sq}, {band.sigma_hi_sq}]")


def constant_policy(v: float) -> VolatilityPolicy:
    return VolatilityPolicy(PolicyKind.CONSTANT, value=float(v))


def table_policy(times: Sequence[float], values: Sequence[float]) -> VolatilityPolicy:
    return VolatilityPolicy(PolicyKind.TABLE, times=tuple(map(float, times)), values=tuple(map(float, values)))


def feedback_policy(indicator: Callable, band: VolatilityBand, name: str = "feedback") -> VolatilityPolicy:
    return VolatilityPolicy(PolicyKind.FEEDBACK, indicator=indicator, lo=band.sigma_lo_sq,
                            hi=band.sigma_hi_sq, name=name)


def lattice_feedback_policy(xi: Callable, spec: ProblemSpec) -> VolatilityPolicy:
    """Feedback on the sign of the second difference of the lattice value at the nearest node."""
    surf = conditional_g_expectation(spec.terminal_row() if xi is None else
                                     np.asarray(xi(spec.x), dtype=float) * np.ones(spec.x.shape), spec).values
    convex = np.zeros(surf.shape, dtype=bool)
    convex[:, 1:-1] = surf[:, 2:] - 2 * surf[:, 1:-1] + surf[:, :-2] > 0
    dt, h, J, n = spec.dt, spec.lattice.spacing_h, spec.lattice.half_width_J, spec.grid.n_steps

    def indicator(t, x):
        # convexity of the row the step lands on
        i = min(int(math.floor(t / dt + 1e-9)) + 1, n)
        j = np.clip(np.rint(np.asarray(x) / h).astype(int), -J, J) + J
        return convex[i, j]

    return feedback_policy(indicator, spec.band, name="lattice-feedback")


class MCEstimate(NamedTuple):
    estimate: float
    std_error: float


@dataclass(frozen=True)
class MCSetup:
    band: VolatilityBand
    T: float = 1.0
    n_steps: int = 100
    block_size: int = BLOCK_SIZE
    threads: int = 1


def _block_sums(xi: Callable, policy: VolatilityPolicy, setup: MCSetup, n: int,
                ss: np.random.SeedSequence) -> tuple[float, float]:
    rng = np.random.default_rng(ss)
    dt = setup.T / setup.n_steps
    x = np.zeros(n)
    for i in range(setup.n_steps):
        v = policy.rates(i * dt, x)
        _check_rate(v, setup.band, policy.label())
        x = x + np.sqrt(v * dt) * rng.standard_normal(n)
    vals = np.asarray(xi(x), dtype=float) * np.ones(n)
    return float(np.sum(vals)), float(np.sum(vals * vals))


def simulate_policy_value(xi: Callable, policy: VolatilityPolicy, n_paths: int, seed: int,
                          setup: MCSetup) -> MCEstimate:
    """Mean of ``xi(B_T)`` under ``policy`` and its standard error; deterministic in ``seed``."""
    if n_paths < MIN_PATHS:
        raise ValueError(f"n_paths must be >= {MIN_PATHS}, got {n_paths}")
    policy.validate(setup.band)
    bs = setup.block_size
    sizes = [bs] * (n_paths // bs) + ([n_paths % bs] if n_paths % bs else [])
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, seeds))

    def run(job):
        return _block_sums(xi, policy, setup, *job)

    if setup.threads > 1:
        with ThreadPoolExecutor(max_workers=setup.threads) as ex:
            sums = list(ex.map(run, jobs))
    else:
        sums = [run(j) for j in jobs]
    s1 = s2 = 0.0
    for a, b in sums:  # fixed block order
        s1 += a
        s2 += b
    mean = s1 / n_paths
    var = max(s2 / n_paths - mean * mean, 0.0) * n_paths / (n_paths - 1)
    return MCEstimate(mean, math.sqrt(var / n_paths))


@dataclass
class PolicySearchResult:
    best: MCEstimate
    best_policy: str
    per_policy: dict[str, MCEstimate] = field(default_factory=dict)


def sup_over_policies(xi: Callable, family: Sequence[VolatilityPolicy], n_paths: int, seed: int,
                      setup: MCSetup) -> PolicySearchResult:
    """Best estimate over ``family``; all policies share the same random numbers."""
    if not family:
        raise ValueError("policy family is empty")
    per = {}
    for p in family:
        label = p.label()
        while label in per:
            label += "'"
        per[label] = simulate_policy_value(xi, p, n_paths, seed, setup)
    best = max(per, key=lambda k: per[k].estimate)
    return PolicySearchResult(per[best], best, per)


def representation_checks(xi: Callable, spec: ProblemSpec, family: Sequence[VolatilityPolicy], n_paths: int,
                          seed: int, setup: MCSetup, convex: bool = False, name: str = "") -> DiagnosticsReport:
    """Domination of the policy sup by the lattice value and, for convex ``xi``, attainment
    by the constant ``sigma_hi_sq`` policy."""
    lattice = g_expectation(np.asarray(xi(spec.x), dtype=float) * np.ones(spec.x.shape), spec)
    res = sup_over_policies(xi, family, n_paths, seed, setup)
    allowance = DISCRETIZATION_ALLOWANCE * (1 + abs(lattice))
    rep = DiagnosticsReport()
    tag = f"[{name}]" if name else ""
    rep.add(check(f"mc_domination{tag}", res.best.estimate - lattice, SE_MULTIPLE * res.best.std_error + allowance,
                  ANCHOR_REP, lattice=lattice, mc=res.best.estimate, se=res.best.std_error, policy=res.best_policy))
    if convex:
        hi = simulate_policy_value(xi, constant_policy(spec.band.sigma_hi_sq), n_paths, seed, setup)
        rep.add(check(f"mc_attainment{tag}", lattice - hi.estimate, SE_MULTIPLE * hi.std_error + allowance,
                      ANCHOR_REP, lattice=lattice, mc=hi.estimate, se=hi.std_error))
    return rep
