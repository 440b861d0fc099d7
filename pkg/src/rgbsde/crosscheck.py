"""Cross-validation of the penalisation limit against the projection oracles."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .core_model import CheckResult, DiagnosticsReport, ProblemSpec, check
from .pde_oracle import (enumerate_stopping_policies, optimal_stopping_oracle, path_tree_stopping_value,
                         solve_obstacle_fd, MAX_BRUTE_FORCE_STEPS, MAX_POLICY_ENUMERATION_STEPS)
from .reflected import ReflectedSolution, solve_penalized

ANCHOR_MAXIMAL = "the penalisation limit is the maximal solution"
ANCHOR_AGREEMENT = "penalisation limit agrees with the projection scheme"
ANCHOR_CLASSICAL = "classical case: reflected value = inf over stopping times"

MAXIMALITY_LADDER_TOL = 1e-12
MAXIMALITY_LIMIT_TOL = 1e-3
AGREEMENT_FLOOR = 1e-3
CERTIFY_TOL = 1e-12


def oracle_agreement_check(rs: ReflectedSolution, oracle: Optional[np.ndarray] = None) -> CheckResult:
    """``max |Y - Y_fd| <= max(2*sup_excess_final, 1e-3)``."""
    fd = solve_obstacle_fd(rs.spec).values if oracle is None else oracle
    diff = float(np.max(np.abs(rs.Y.values - fd)))
    tol = max(2.0 * rs.final.sup_excess, AGREEMENT_FLOOR)
    return check("oracle_agreement", diff, tol, ANCHOR_AGREEMENT, sup_excess_final=rs.final.sup_excess,
                 n_final=rs.final.n)


def maximality_check(rs: ReflectedSolution, oracle: Optional[np.ndarray] = None) -> DiagnosticsReport:
    """Projection solution below every ladder ``Y^n`` (to 1e-12) and below the limit (to 1e-3).

    The ladder is re-solved one ``n`` at a time on the limit's grid so that
    only one surface is held in memory.
    """
    fd = solve_obstacle_fd(rs.spec).values if oracle is None else oracle
    worst = -math.inf
    per_n = {}
    for n in rs.report.n_values:
        y = solve_penalized(rs.spec, n, validate=False).Y.values
        per_n[n] = float(np.max(fd - y))
        worst = max(worst, per_n[n])
    rep = DiagnosticsReport()
    rep.add(check("maximality_ladder", worst, MAXIMALITY_LADDER_TOL, ANCHOR_MAXIMAL,
                  per_n={str(k): v for k, v in per_n.items()}))
    rep.add(check("maximality_limit", float(np.max(fd - rs.Y.values)), MAXIMALITY_LIMIT_TOL, ANCHOR_MAXIMAL))
    return rep


def classical_certification(spec: ProblemSpec) -> DiagnosticsReport:
    """Dynamic program vs. path enumeration (and vs. the projection scheme) on a small classical tree."""
    rep = DiagnosticsReport()
    dp = optimal_stopping_oracle(spec).value
    rep.add(check("dp_vs_projection", float(np.max(np.abs(dp.values - solve_obstacle_fd(spec).values))),
                  1e-10, ANCHOR_CLASSICAL))
    n = spec.grid.n_steps
    if n <= MAX_BRUTE_FORCE_STEPS:
        brute = path_tree_stopping_value(spec)
        rep.add(check("dp_vs_path_enumeration", abs(dp.root() - brute), CERTIFY_TOL, ANCHOR_CLASSICAL,
                      dp=dp.root(), brute=brute, n_steps=n))
    if n <= MAX_POLICY_ENUMERATION_STEPS:
        best, count = enumerate_stopping_policies(spec)
        rep.add(check("dp_vs_policy_enumeration", abs(dp.root() - best), CERTIFY_TOL, ANCHOR_CLASSICAL,
                      policies=count))
    return rep
