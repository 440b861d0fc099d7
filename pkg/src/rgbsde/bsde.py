"""Backward lattice solver for G-BSDEs.

At each step ``i`` (working down from the terminal row)::

    Z_{i,j} = (Y_{i+1,j+1} - Y_{i+1,j-1}) / (2h)          (one-sided at |j| = J)
    E*_{i,j} = one-step sup of row Y_{i+1} at j
    Y_{i,j}  solves  y = E* + dt*f(t_i, x_j, y, Z_{i,j}) - dt*n*(y - S_{i,j})^+

The equation in ``y`` is solved by Picard iteration on ``f``; the penalty
term (present only for penalised equations) is inverted in closed form at
every iterate, so the contraction rate is ``dt*L`` whatever ``n`` is.

The decreasing G-martingale ``K`` is represented by its per-node defect:
``defect_v = E* - E_v`` is the expected decrease of ``K`` over one step
under the constant-variance scenario ``v``. The maximising scenario has
zero defect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core_model import (BoundaryMode, LatticeSurface, ProblemSpec, SurfaceKind,
                         validate_spec)
from .sublinear import _sup_and_argmax, scenario_expectations

PICARD_TOL = 1e-13
PICARD_MAX_ITER = 100


class PicardError(RuntimeError):
    """Per-node fixed-point iteration failed to converge."""


class GridRefinementError(ValueError):
    """The time step is too coarse for the requested Lipschitz/penalty budget."""


class SpecError(ValueError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(v.message for v in violations))


@dataclass(frozen=True)
class GBsdeSolution:
    Y: LatticeSurface
    Z: LatticeSurface
    defect: dict[float, LatticeSurface]
    argmax_v: np.ndarray
    spec: ProblemSpec
    picard_iterations: int = 0
    penalty_n: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def Y0(self) -> float:
        return self.Y.root()

    def min_defect(self) -> np.ndarray:
        return np.minimum.reduce([d.values for d in self.defect.values()])


def central_difference(row: np.ndarray, h: float) -> np.ndarray:
    """Central first difference along the last axis, one-sided at both ends."""
    row = np.asarray(row, dtype=float)
    d = np.empty_like(row)
    d[..., 1:-1] = (row[..., 2:] - row[..., :-2]) / (2 * h)
    d[..., 0] = (row[..., 1] - row[..., 0]) / h
    d[..., -1] = (row[..., -1] - row[..., -2]) / h
    return d


def penalty_resolvent(e: np.ndarray, s: np.ndarray, c: float) -> np.ndarray:
    """Solve ``y = e - c*(y - s)^+`` for ``y`` (``c >= 0``), order preserving in ``e``."""
    if c == 0:
        return e
    with np.errstate(invalid="ignore"):
        excess = e - s
        pushed = np.minimum(e, s + excess / (1.0 + c))
    return np.where(excess > 0, pushed, e)


def _check_budget(spec: ProblemSpec, n: float):
    budget = spec.dt * (spec.lipschitz_L + n)
    if budget >= 0.5:
        what = "dt*(L+n)" if n else "dt*L"
        need = int(np.ceil(2 * spec.grid.horizon_T * (spec.lipschitz_L + n))) + 1
        raise GridRefinementError(
            f"{what} = {budget:.6g} >= 1/2 (dt={spec.dt:.6g}, L={spec.lipschitz_L}, n={n}); "
            f"refine the time grid to at least {need} steps"
        )


def backward_solve(spec: ProblemSpec, *, terminal: Optional[np.ndarray] = None,
                   generator: Optional[Callable] = None, penalty_n: float = 0.0,
                   obstacle: Optional[np.ndarray] = None) -> GBsdeSolution:
    """Core recursion shared by the plain, penalised and Girsanov-type solves."""
    n_steps, N = spec.grid.n_steps, spec.lattice.n_nodes
    dt, h, x = spec.dt, spec.lattice.spacing_h, spec.x
    f = spec.generator_f if generator is None else generator
    _check_budget(spec, penalty_n)
    xi = spec.terminal_row() if terminal is None else np.asarray(terminal, dtype=float)
    if xi.shape != (N,):
        raise ValueError(f"terminal row must have shape ({N},), got {xi.shape}")
    if penalty_n:
        S = spec.obstacle_surface() if obstacle is None else np.asarray(obstacle, dtype=float)
    c = dt * penalty_n
    dirichlet = spec.lattice.boundary_mode == BoundaryMode.DIRICHLET

    Y = np.empty((n_steps + 1, N))
    Z = np.empty((n_steps + 1, N))
    defects = {v: np.zeros((n_steps + 1, N)) for v in spec.band.endpoints}
    argmax = np.empty((n_steps, N))
    Y[n_steps] = xi
    Z[n_steps] = central_difference(xi, h)
    max_iter = 0
    for i in range(n_steps - 1, -1, -1):
        t = spec.grid.t(i)
        nxt = Y[i + 1]
        per_v = scenario_expectations(nxt, spec)
        e_star, argmax[i] = _sup_and_argmax(per_v, spec)
        for v, e_v in per_v.items():
            defects[v][i] = e_star - e_v
        z = central_difference(nxt, h)
        s_row = S[i] if penalty_n else None

        def step(y):
            e = e_star + dt * np.asarray(f(t, x, y, z), dtype=float)
            return penalty_resolvent(e, s_row, c) if penalty_n else e

        y = penalty_resolvent(e_star, s_row, c) if penalty_n else e_star
        for it in range(1, PICARD_MAX_ITER + 1):
            y_new = step(y)
            diff = np.abs(y_new - y)
            y = y_new
            if np.all(diff <= PICARD_TOL * np.maximum(1.0, np.abs(y))):
                break
        else:
            bad = int(np.argmax(diff / np.maximum(1.0, np.abs(y))))
            raise PicardError(
                f"Picard iteration did not converge at node (i={i}, j={bad - spec.lattice.half_width_J}) "
                f"after {PICARD_MAX_ITER} iterations (last |dy| = {diff[bad]:.3g})"
            )
        max_iter = max(max_iter, it)
        if dirichlet:
            y[0], y[-1] = xi[0], xi[-1]
        if not np.all(np.isfinite(y)):
            raise PicardError(f"non-finite value at time step {i}")
        Y[i] = y
        Z[i] = z
    return GBsdeSolution(
        Y=LatticeSurface(Y, SurfaceKind.Y),
        Z=LatticeSurface(Z, SurfaceKind.Z),
        defect={v: LatticeSurface(d, SurfaceKind.DEFECT) for v, d in defects.items()},
        argmax_v=argmax,
        spec=spec,
        picard_iterations=max_iter,
        penalty_n=penalty_n,
    )


def solve_gbsde(spec: ProblemSpec, *, validate: bool = True) -> GBsdeSolution:
    """Solve the (unreflected) G-BSDE with data ``(xi, f)`` of ``spec``."""
    if validate:
        bad = validate_spec(spec, check_obstacle=False)
        if bad:
            raise SpecError(bad)
    return backward_solve(spec)


def abs_z_generator(L: float):
    def f(t, x, y, z):
        return L * np.abs(z)
    return f


def girsanov_expectation(xi_values: np.ndarray, spec: ProblemSpec, L: float) -> LatticeSurface:
    """Dominating sublinear expectation: the Y surface of the G-BSDE with driver ``L*|z|``."""
    if L < 0:
        raise ValueError(f"L must be >= 0, got {L}")
    from dataclasses import replace
    work = replace(spec, lipschitz_L=float(L))
    return backward_solve(work, terminal=np.asarray(xi_values, dtype=float),
                          generator=abs_z_generator(float(L))).Y


def backward_residual(Y: np.ndarray, spec: ProblemSpec, Z: Optional[np.ndarray] = None) -> np.ndarray:
    """``Y_i - E*(Y_{i+1}) - dt*f(t_i, x, Y_i, Z_i)`` per node; last row zero."""
    n_steps, h = spec.grid.n_steps, spec.lattice.spacing_h
    Y = np.asarray(Y, dtype=float)
    out = np.zeros_like(Y)
    for i in range(n_steps):
        e_star, _ = _sup_and_argmax(scenario_expectations(Y[i + 1], spec), spec)
        z = central_difference(Y[i + 1], h) if Z is None else Z[i]
        out[i] = Y[i] - e_star - spec.dt * np.asarray(spec.generator_f(spec.grid.t(i), spec.x, Y[i], z), dtype=float)
    return out
