"""Reflected G-BSDE with an upper obstacle, built by penalisation.

The n-th penalised equation carries the extra driver ``-n(y - S)^+``; as
``n`` grows its solution decreases to the maximal solution of the
reflected equation. Lattice conventions:

* ``L_increments[i, j] = -n*dt*(Y^n_{i,j} - S_{i,j})^+`` (push-down of step ``i``),
* aggregate norms (``L_T_norm``, ``K_T_norm``, ...) are worst-case expected
  path sums over volatility policies started at the root, computed by
  :func:`rgbsde.sublinear.sup_accumulated`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bsde import GBsdeSolution, SpecError, backward_residual, backward_solve
from .core_model import (CheckResult, DiagnosticsReport, LatticeSurface, ProblemSpec,
                         SurfaceKind, check, validate_spec)
from .sublinear import scenario_expectations, sup_accumulated, _sup_and_argmax

DEFAULT_SCHEDULE = (4, 8, 16, 32, 64, 128, 256, 512)
DEFAULT_TOL = 1e-3
TOL_MONO = 1e-12
SLOPE_BAND = (-1.3, -0.7)
CAUCHY_THRESHOLD = 0.1

ANCHOR_RATE = "penalization rate: sup (Y^n - S)^+ <= C/n"
ANCHOR_BOUND_Y = "uniform bound on sup |Y^n|"
ANCHOR_BOUND_LK = "uniform bounds on |L_T^n|, |K_T^n| and total variation of A^n"
ANCHOR_CAUCHY = "Cauchy property of (Y^n)"
ANCHOR_OBSTACLE = "reflected solution: Y <= S"
ANCHOR_MARTINGALE = "martingale condition: -int (S - Y) dA is a decreasing G-martingale"
ANCHOR_SKOROKHOD = "Skorokhod-type condition int (S - Y) dA^2 = 0"
ANCHOR_MONOTONE = "comparison theorem applied along the penalty ladder"
ANCHOR_A_SIGN = "-A is a G-submartingale (reflection pushes down)"


@dataclass(frozen=True)
class PenalizedSolution:
    n: float
    solution: GBsdeSolution
    L_increments: LatticeSurface
    sup_excess: float
    L_T_norm: float
    K_T_norm: float

    @property
    def Y(self) -> LatticeSurface:
        return self.solution.Y

    @property
    def spec(self) -> ProblemSpec:
        return self.solution.spec

    @property
    def var_A(self) -> float:
        return self.L_T_norm + self.K_T_norm


@dataclass
class PenalizationRow:
    n: float
    sup_excess: float
    L_T_norm: float
    K_T_norm: float
    var_A: float
    cauchy_gap: Optional[float]  # sup |Y^n - Y^{next n}|; None on the last row
    max_abs_Y: float

    def as_dict(self) -> dict:
        return {"n": self.n, "sup_excess": self.sup_excess, "L_T_norm": self.L_T_norm,
                "K_T_norm": self.K_T_norm, "var_A": self.var_A, "cauchy_gap": self.cauchy_gap,
                "max_abs_Y": self.max_abs_Y}


@dataclass
class PenalizationReport:
    rows: list[PenalizationRow]
    slope: Optional[float] = None
    slope_status: str = "undefined"  # "fitted" | "exact" | "undefined"
    converged: bool = False
    martingale_defect: Optional[float] = None
    skorokhod_residual: Optional[float] = None
    n_steps: int = 0
    monotone_margin: float = 0.0  # min over consecutive rows of Y^n - Y^{next n}

    @property
    def n_values(self) -> list[float]:
        return [r.n for r in self.rows]

    def to_dict(self) -> dict:
        return {
            "rows": [r.as_dict() for r in self.rows],
            "slope": self.slope,
            "slope_status": self.slope_status,
            "converged": self.converged,
            "martingale_defect": self.martingale_defect,
            "skorokhod_residual": self.skorokhod_residual,
            "n_steps": self.n_steps,
            "monotone_margin": self.monotone_margin,
        }


@dataclass(frozen=True)
class ReflectedSolution:
    Y: LatticeSurface
    Z: LatticeSurface
    A_increments: LatticeSurface
    A1_increments: LatticeSurface
    A2_increments: LatticeSurface
    report: PenalizationReport
    final: PenalizedSolution
    spec: ProblemSpec
    extras: dict = field(default_factory=dict)

    @property
    def S(self) -> np.ndarray:
        return self.spec.obstacle_surface()


def _require_obstacle(spec: ProblemSpec):
    if spec.obstacle_S is None:
        raise ValueError("penalised / reflected solves need an obstacle S")


def _validated(spec: ProblemSpec):
    bad = validate_spec(spec)
    if bad:
        raise SpecError(bad)


def solve_penalized(spec: ProblemSpec, n: float, *, validate: bool = True) -> PenalizedSolution:
    """Solve the G-BSDE with driver ``f - n(y - S)^+``.

    Raises :class:`GridRefinementError` when ``dt*(L+n) >= 1/2``.
    """
    _require_obstacle(spec)
    if n < 0:
        raise ValueError(f"penalty level must be >= 0, got {n}")
    if validate:
        _validated(spec)
    S = spec.obstacle_surface()
    sol = backward_solve(spec, penalty_n=float(n), obstacle=S)
    Y = sol.Y.values
    excess = np.maximum(Y - S, 0.0)
    dL = -n * spec.dt * excess
    dL[-1] = 0.0
    L_norm = sup_accumulated(-dL, spec).root()
    K_norm = sup_accumulated({v: d.values for v, d in sol.defect.items()}, spec).root()
    return PenalizedSolution(
        n=n,
        solution=sol,
        L_increments=LatticeSurface(dL, SurfaceKind.A_INCREMENT),
        sup_excess=float(excess.max()),
        L_T_norm=float(L_norm),
        K_T_norm=float(K_norm),
    )


def grid_for_penalty(spec: ProblemSpec, n_max: float) -> ProblemSpec:
    """Double the number of time steps until ``dt*(L + n_max) < 1/2``."""
    work = spec
    while work.dt * (work.lipschitz_L + n_max) >= 0.5:
        work = work.refined(2)
    return work


def _strictly_increasing(ns: Sequence[float], what: str = "n_list"):
    ns = list(ns)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError(f"{what} must be strictly increasing, got {ns}")
    return ns


def fit_loglog_slope(ns: Sequence[float], values: Sequence[float]) -> tuple[Optional[float], str]:
    """Least-squares slope of ``log(values)`` against ``log(ns)``.

    All-zero values mean the obstacle never binds: status ``"exact"``.
    """
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.all(values == 0):
        return None, "exact"
    pos = values > 0
    if pos.sum() < 2:
        return None, "undefined"
    slope, _ = np.polyfit(np.log(ns[pos]), np.log(values[pos]), 1)
    return float(slope), "fitted"


class _Ladder:
    """Streams penalised solves, keeping only the report rows and the newest solution."""

    def __init__(self):
        self.rows: list[PenalizationRow] = []
        self.last: Optional[PenalizedSolution] = None
        self.monotone_margin = math.inf

    def push(self, ps: PenalizedSolution) -> Optional[float]:
        gap = None
        if self.last is not None:
            diff = self.last.Y.values - ps.Y.values
            gap = float(np.max(np.abs(diff)))
            self.monotone_margin = min(self.monotone_margin, float(np.min(diff)))
            self.rows[-1].cauchy_gap = gap
        self.rows.append(PenalizationRow(ps.n, ps.sup_excess, ps.L_T_norm, ps.K_T_norm, ps.var_A, None,
                                         float(np.max(np.abs(ps.Y.values)))))
        self.last = ps
        return gap

    def report(self, n_steps: int, converged: bool = False) -> PenalizationReport:
        if len(self.rows) >= 2:
            slope, status = fit_loglog_slope([r.n for r in self.rows], [r.sup_excess for r in self.rows])
        else:
            slope, status = None, "undefined"
        margin = 0.0 if self.monotone_margin == math.inf else self.monotone_margin
        return PenalizationReport(self.rows, slope, status, converged=converged, n_steps=n_steps,
                                  monotone_margin=margin)


def _run_ladder(spec: ProblemSpec, n_list: Sequence[float]) -> tuple[ProblemSpec, _Ladder]:
    """Penalised solves of ``n_list`` on one grid fine enough for the largest ``n``."""
    n_list = _strictly_increasing(n_list)
    _require_obstacle(spec)
    _validated(spec)
    work = grid_for_penalty(spec, n_list[-1])
    ladder = _Ladder()
    for n in n_list:
        ladder.push(solve_penalized(work, n, validate=False))
    return work, ladder


def iter_penalized(spec: ProblemSpec, n_list: Sequence[float]):
    """Yield ``(work_spec, PenalizedSolution)`` one ``n`` at a time on a common grid."""
    n_list = _strictly_increasing(n_list)
    _require_obstacle(spec)
    _validated(spec)
    work = grid_for_penalty(spec, n_list[-1])
    for n in n_list:
        yield work, solve_penalized(work, n, validate=False)


def rate_study(spec: ProblemSpec, n_list: Sequence[float]) -> PenalizationReport:
    """Per-n diagnostics and the fitted log-log slope of ``sup (Y^n - S)^+``."""
    n_list = _strictly_increasing(n_list)
    if len(n_list) < 4:
        raise ValueError(f"rate study needs at least 4 penalty levels, got {len(n_list)}")
    work, ladder = _run_ladder(spec, n_list)
    return ladder.report(work.grid.n_steps)


def solve_reflected(spec: ProblemSpec, n_schedule: Sequence[float] = DEFAULT_SCHEDULE,
                    tol: float = DEFAULT_TOL) -> ReflectedSolution:
    """Run the penalty ladder until ``sup_excess <= tol`` and the Cauchy gap ``<= tol``.

    When the next ``n`` breaks ``dt*(L+n) < 1/2`` the time step is halved
    until the largest scheduled ``n`` fits, and the ladder restarts on that
    grid, so every row of the report shares one grid. The returned ``Y`` is
    ``min(Y^n, S)`` of the last penalised solve; ``A`` is the backward
    residual of that ``Y``.
    """
    schedule = _strictly_increasing(n_schedule, "n_schedule")
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    _require_obstacle(spec)
    _validated(spec)

    work = spec
    ladder = _Ladder()
    converged = False
    k = 0
    while k < len(schedule):
        n = schedule[k]
        if work.dt * (work.lipschitz_L + n) >= 0.5:
            # refine once for the whole schedule so the ladder is rerun at most once
            work = grid_for_penalty(work, schedule[-1])
            ladder, k = _Ladder(), 0
            continue
        ps = solve_penalized(work, n, validate=False)
        gap = ladder.push(ps)
        if gap is not None and ps.sup_excess <= tol and gap <= tol:
            converged = True
            break
        k += 1

    final = ladder.last
    report = ladder.report(work.grid.n_steps, converged)
    S = work.obstacle_surface()
    Y = np.minimum(final.Y.values, S)
    Z = final.solution.Z.values
    dA = backward_residual(Y, work, Z)
    dA2 = -final.L_increments.values
    rs = ReflectedSolution(
        Y=LatticeSurface(Y, SurfaceKind.Y),
        Z=LatticeSurface(Z, SurfaceKind.Z),
        A_increments=LatticeSurface(dA, SurfaceKind.A_INCREMENT),
        A1_increments=LatticeSurface(dA + dA2, SurfaceKind.A_INCREMENT),
        A2_increments=LatticeSurface(dA2, SurfaceKind.A_INCREMENT),
        report=report,
        final=final,
        spec=work,
    )
    report.martingale_defect = martingale_defect(rs)
    report.skorokhod_residual = skorokhod_residual(rs)
    return rs


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def monotonicity_check(spec: ProblemSpec, n_list: Sequence[float], limit: Optional[np.ndarray] = None,
                       tol: float = 0.0) -> CheckResult:
    """``Y^n >= Y^{n'} - tol`` nodewise for ``n < n'`` and ``Y^n >= limit - TOL_MONO`` if given.

    ``tol = 0`` is exact and holds for drivers free of ``z``. With a
    ``z``-dependent driver the stencil and the ``z`` term are rounded
    separately, so order can be lost by a few ulps.
    """
    work, ladder = _run_ladder(spec, n_list)
    margin = ladder.monotone_margin + tol
    if limit is not None:
        lim = np.asarray(limit, dtype=float)
        if lim.shape != ladder.last.Y.shape:
            raise ValueError(f"limit surface shape {lim.shape} does not match the ladder grid {ladder.last.Y.shape}")
        # the limit comes from another code path, so compare at the ladder tolerance
        margin = min(margin, float(np.min(ladder.last.Y.values - lim)) + TOL_MONO)
    if margin == math.inf:
        margin = 0.0
    return CheckResult("penalty_monotonicity", margin >= 0, margin, tol, ANCHOR_MONOTONE, margin,
                       {"n_list": list(n_list), "n_steps": work.grid.n_steps})


def report_monotonicity(report: PenalizationReport, tol: float = 0.0) -> CheckResult:
    """Same check read off a report already produced by :func:`rate_study`."""
    m = report.monotone_margin + tol
    return CheckResult("penalty_monotonicity", m >= 0, m, tol, ANCHOR_MONOTONE, m,
                       {"n_list": report.n_values, "n_steps": report.n_steps})


def _martingale_increments(rs: ReflectedSolution) -> dict[float, np.ndarray]:
    """Per-scenario increments of ``M = -int (S - Y) dA`` (rows ``0..n-1``)."""
    spec = rs.spec
    Y, S, dA = rs.Y.values, rs.S, rs.A_increments.values
    gap = S - Y
    n = spec.grid.n_steps
    out = {v: np.zeros_like(Y) for v in spec.band.endpoints}
    for i in range(n):
        per_v = scenario_expectations(Y[i + 1], spec)
        e_star, _ = _sup_and_argmax(per_v, spec)
        for v, e_v in per_v.items():
            # scenario-v increment of A is the max-scenario one plus the defect
            out[v][i] = -gap[i] * (dA[i] + (e_star - e_v))
    return out


def martingale_defect(rs: ReflectedSolution) -> float:
    """Max over nodes of ``|G-expectation of future M-increments|`` (0 for a G-martingale)."""
    W = sup_accumulated(_martingale_increments(rs), rs.spec).values
    return float(np.max(np.abs(W)))


def martingale_condition_check(rs: ReflectedSolution, tol_mono: float = TOL_MONO,
                               factor: float = 5.0) -> DiagnosticsReport:
    """(a) ``M`` nonincreasing in every scenario; (b) cumulative G-martingale defect small."""
    inc = _martingale_increments(rs)
    worst_inc = max(float(np.max(v[:-1])) if v.shape[0] > 1 else 0.0 for v in inc.values())
    defect = martingale_defect(rs)
    sup_exc = rs.final.sup_excess
    rep = DiagnosticsReport()
    rep.add(check("martingale_nonincreasing", worst_inc, tol_mono, ANCHOR_MARTINGALE))
    rep.add(check("martingale_defect", defect, factor * sup_exc, ANCHOR_MARTINGALE,
                  sup_excess_final=sup_exc, n_final=rs.final.n))
    return rep


def skorokhod_residual(rs: ReflectedSolution) -> float:
    """Worst-case expected ``|sum (S - Y^n) dA^2|`` from the root."""
    spec = rs.spec
    Yn = rs.final.Y.values
    q = (Yn - rs.S) * rs.A2_increments.values  # = n dt ((Y^n - S)^+)^2 >= 0
    return float(sup_accumulated(np.abs(q), spec).root())


def skorokhod_check(rs: ReflectedSolution) -> CheckResult:
    R = skorokhod_residual(rs)
    bound = rs.spec.grid.horizon_T * rs.final.n * rs.final.sup_excess ** 2
    return check("skorokhod_residual", R, bound, ANCHOR_SKOROKHOD, n_final=rs.final.n,
                 sup_excess_final=rs.final.sup_excess)


def obstacle_check(rs: ReflectedSolution) -> CheckResult:
    with np.errstate(invalid="ignore"):
        worst = float(np.max(rs.Y.values - rs.S))
    return check("obstacle", worst, 0.0, ANCHOR_OBSTACLE)


def a_sign_check(rs: ReflectedSolution) -> CheckResult:
    """``Delta A <= tol``; the clipped-residual extraction can leave a positive part of
    at most ``(1 + dt*L)*sup_excess`` next to the contact set."""
    tol = (1 + rs.spec.dt * rs.spec.lipschitz_L) * rs.final.sup_excess + TOL_MONO
    return check("a_increments_nonpositive", float(np.max(rs.A_increments.values)), tol, ANCHOR_A_SIGN)


def uniform_bound_checks(spec: ProblemSpec, report: PenalizationReport,
                         plain_Y: Optional[np.ndarray] = None) -> DiagnosticsReport:
    """Ladder-uniform bounds on ``|Y^n|``, ``L_T``, ``K_T``, ``Var(A)`` and the Cauchy gaps."""
    rep = DiagnosticsReport()
    rows = report.rows
    work = grid_for_penalty(spec, rows[-1].n)
    xi = work.terminal_row()
    S = work.obstacle_surface()
    if plain_Y is None:
        plain_Y = backward_solve(work).Y.values
    bound = max(float(np.max(np.abs(xi))), float(np.max(np.abs(S[np.isfinite(S)]), initial=0.0)),
                float(np.max(np.abs(plain_Y)))) + 1.0
    rep.add(check("uniform_bound_Y", max(r.max_abs_Y for r in rows), bound, ANCHOR_BOUND_Y))
    first = rows[0]
    for name, key in (("uniform_bound_L_T", "L_T_norm"), ("uniform_bound_K_T", "K_T_norm"),
                      ("uniform_bound_var_A", "var_A")):
        vals = [getattr(r, key) for r in rows]
        rep.add(check(name, max(vals), 2.0 * getattr(first, key) + 1.0, ANCHOR_BOUND_LK, values=vals))
    rep.add(cauchy_check(report))
    return rep


def cauchy_check(report: PenalizationReport, threshold: float = CAUCHY_THRESHOLD) -> CheckResult:
    """Gaps ``sup|Y^n - Y^{2n}|`` strictly decrease once ``sup_excess < threshold``.

    A zero gap followed by a zero gap counts as converged, with margin 0.
    """
    gaps = [(r.sup_excess, r.cauchy_gap) for r in report.rows if r.cauchy_gap is not None]
    margin = math.inf
    for (exc, g0), (_, g1) in zip(gaps, gaps[1:]):
        if exc >= threshold:
            continue
        if g0 == 0.0 and g1 == 0.0:
            step = 0.0
        elif g1 < g0:
            step = g0 - g1
        else:
            # equal nonzero gaps fail too
            step = min(g0 - g1, -math.ulp(g0))
        margin = min(margin, step)
    if margin == math.inf:
        margin = 0.0
    return CheckResult("cauchy_gaps_decreasing", margin >= 0, margin, 0.0, ANCHOR_CAUCHY, margin,
                       {"gaps": [g for _, g in gaps], "threshold": threshold})


def rate_check(report: PenalizationReport, band: tuple[float, float] = SLOPE_BAND) -> DiagnosticsReport:
    """Fitted slope inside ``band`` and ``sup_excess`` nonincreasing along the ladder."""
    rep = DiagnosticsReport()
    lo, hi = band
    s = report.slope
    if s is None:
        rep.add(CheckResult("rate_slope", False, -math.inf, hi, ANCHOR_RATE, None,
                            {"status": report.slope_status, "band": list(band)}))
    else:
        margin = min(s - lo, hi - s)
        rep.add(CheckResult("rate_slope", margin >= 0, margin, hi, ANCHOR_RATE, s,
                            {"status": report.slope_status, "band": list(band)}))
    exc = [r.sup_excess for r in report.rows]
    mono = min((a - b for a, b in zip(exc, exc[1:])), default=0.0)
    rep.add(check("sup_excess_monotone", mono, 0.0, ANCHOR_RATE, upper=False, values=exc))
    return rep


def reflected_checks(rs: ReflectedSolution) -> DiagnosticsReport:
    rep = DiagnosticsReport()
    rep.add(obstacle_check(rs))
    rep.add(a_sign_check(rs))
    rep.extend(martingale_condition_check(rs))
    rep.add(skorokhod_check(rs))
    return rep
