"""Problem data model, grid construction and standing-assumption checks.

Everything downstream works on a rectangular lattice: time steps
``i = 0..n_steps`` and space nodes ``j = -J..J`` with ``x_j = j*h``.
Arrays are stored with the node axis last, so node ``j`` lives at
column ``j + J``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

Terminal = Callable[[np.ndarray], np.ndarray]
Generator = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
Obstacle = Callable[[float, np.ndarray], np.ndarray]

# relative slack for exact-looking equalities (CFL boundary, coverage)
_REL_EPS = 1e-12


@dataclass(frozen=True)
class VolatilityBand:
    """Variance-rate interval ``[sigma_lo_sq, sigma_hi_sq]`` defining G."""

    sigma_lo_sq: float
    sigma_hi_sq: float

    def __post_init__(self):
        if not (self.sigma_lo_sq > 0):
            raise ValueError(f"sigma_lo_sq must be > 0 (non-degenerate G), got {self.sigma_lo_sq}")
        if self.sigma_hi_sq < self.sigma_lo_sq:
            raise ValueError(
                f"sigma_hi_sq ({self.sigma_hi_sq}) must be >= sigma_lo_sq ({self.sigma_lo_sq})"
            )

    @property
    def is_classical(self) -> bool:
        return self.sigma_lo_sq == self.sigma_hi_sq

    @property
    def endpoints(self) -> tuple[float, ...]:
        """Distinct variance endpoints, low first."""
        if self.is_classical:
            return (self.sigma_lo_sq,)
        return (self.sigma_lo_sq, self.sigma_hi_sq)

    def G(self, a):
        """G applied to a scalar (or array) second derivative."""
        a = np.asarray(a, dtype=float)
        return 0.5 * (self.sigma_hi_sq * np.maximum(a, 0.0) - self.sigma_lo_sq * np.maximum(-a, 0.0))


@dataclass(frozen=True)
class TimeGrid:
    horizon_T: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon_T > 0):
            raise ValueError(f"horizon T must be positive, got {self.horizon_T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be an integer >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon_T / self.n_steps

    def t(self, i: int) -> float:
        # t_n is pinned to T so the terminal time is exact
        if i == self.n_steps:
            return float(self.horizon_T)
        return i * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.array([self.t(i) for i in range(self.n_steps + 1)])


class BoundaryMode(str, Enum):
    CLAMP = "clamp-second-difference-to-zero"
    DIRICHLET = "dirichlet-from-terminal-extension"


@dataclass(frozen=True)
class SpatialLattice:
    spacing_h: float
    half_width_J: int
    boundary_mode: BoundaryMode = BoundaryMode.CLAMP

    def __post_init__(self):
        if not (self.spacing_h > 0):
            raise ValueError(f"spacing_h must be positive, got {self.spacing_h}")
        if int(self.half_width_J) != self.half_width_J or self.half_width_J < 1:
            raise ValueError(f"half_width_J must be an integer >= 1, got {self.half_width_J}")
        object.__setattr__(self, "boundary_mode", BoundaryMode(self.boundary_mode))

    @property
    def n_nodes(self) -> int:
        return 2 * self.half_width_J + 1

    @property
    def x(self) -> np.ndarray:
        J = self.half_width_J
        return np.arange(-J, J + 1) * self.spacing_h

    def index(self, j: int) -> int:
        """Column of node ``j``."""
        if abs(j) > self.half_width_J:
            raise IndexError(f"node {j} outside lattice |j| <= {self.half_width_J}")
        return j + self.half_width_J


def build_grid(band: VolatilityBand, T: float, n_steps: int, coverage_sigmas: float = 6.0,
               boundary_mode: BoundaryMode = BoundaryMode.CLAMP) -> tuple[TimeGrid, SpatialLattice]:
    """Tightest monotone grid: ``h = sqrt(sigma_hi_sq*dt)``, ``J`` covering ``coverage_sigmas`` std devs."""
    if not (T > 0):
        raise ValueError(f"T must be positive, got {T}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if coverage_sigmas < 1:
        raise ValueError(f"coverage_sigmas must be >= 1, got {coverage_sigmas}")
    grid = TimeGrid(float(T), int(n_steps))
    h = math.sqrt(band.sigma_hi_sq * grid.dt)
    ratio = coverage_sigmas * math.sqrt(band.sigma_hi_sq * T) / h
    J = max(1, math.ceil(ratio * (1 - _REL_EPS)))
    return grid, SpatialLattice(h, J, boundary_mode)


class SurfaceKind(str, Enum):
    Y = "Y"
    Z = "Z"
    DEFECT = "defect"
    A_INCREMENT = "A-increment"


@dataclass(frozen=True)
class LatticeSurface:
    """Node values over the time x space lattice, shape ``(n_steps+1, 2J+1)``.

    Increment-type surfaces (defects, A increments) hold the increment over
    ``[t_i, t_{i+1})`` in row ``i``; their last row is zero.
    """

    values: np.ndarray
    kind: SurfaceKind = SurfaceKind.Y

    def __post_init__(self):
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"surface must be 2-d, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("surface contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "kind", SurfaceKind(self.kind))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def row(self, i: int) -> np.ndarray:
        return self.values[i]

    def root(self) -> float:
        """Value at ``(t_0, x=0)``."""
        return float(self.values[0, self.values.shape[1] // 2])

    def matches(self, grid: TimeGrid, lattice: SpatialLattice) -> bool:
        return self.values.shape == (grid.n_steps + 1, lattice.n_nodes)


def _zero_generator(t, x, y, z):
    return np.zeros(np.broadcast(x, y, z).shape)


@dataclass(frozen=True)
class ProblemSpec:
    """Markovian data of a (reflected) G-BSDE on a lattice.

    ``terminal_xi(x)``, ``generator_f(t, x, y, z)`` and ``obstacle_S(t, x)``
    must accept numpy arrays. ``obstacle_b`` / ``obstacle_sigma`` are the
    declared drift and dB-loading of the obstacle; the construction never
    needs them, they only feed diagnostics.
    """

    band: VolatilityBand
    grid: TimeGrid
    lattice: SpatialLattice
    terminal_xi: Terminal
    generator_f: Generator = _zero_generator
    obstacle_S: Optional[Obstacle] = None
    lipschitz_L: float = 0.0
    obstacle_b: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    obstacle_sigma: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    name: str = ""

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def x(self) -> np.ndarray:
        return self.lattice.x

    def terminal_row(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.terminal_xi(self.x), dtype=float), self.x.shape).copy()

    def obstacle_row(self, i: int) -> np.ndarray:
        if self.obstacle_S is None:
            return np.full(self.x.shape, np.inf)
        return np.broadcast_to(
            np.asarray(self.obstacle_S(self.grid.t(i), self.x), dtype=float), self.x.shape
        ).copy()

    def obstacle_surface(self) -> np.ndarray:
        return np.stack([self.obstacle_row(i) for i in range(self.grid.n_steps + 1)])

    def with_grid(self, grid: TimeGrid, lattice: SpatialLattice) -> "ProblemSpec":
        return dataclasses.replace(self, grid=grid, lattice=lattice)

    def refined(self, factor: int = 2) -> "ProblemSpec":
        """Same data on a grid with ``factor`` times more steps and the same spatial coverage."""
        coverage = self.lattice.half_width_J * self.lattice.spacing_h / math.sqrt(
            self.band.sigma_hi_sq * self.grid.horizon_T
        )
        grid, lattice = build_grid(self.band, self.grid.horizon_T, self.grid.n_steps * factor,
                                   max(coverage, 1.0), self.lattice.boundary_mode)
        return self.with_grid(grid, lattice)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    node: Optional[tuple[int, int]] = None  # (time step, j)
    value: Optional[float] = None


def validate_spec(spec: ProblemSpec, *, check_obstacle: bool = True, n_lipschitz_samples: int = 256,
                  coverage_sigmas: float = 6.0, seed: int = 0) -> list[Violation]:
    """Every violated lattice-level assumption; an empty list means valid."""
    out: list[Violation] = []
    band, grid, lat = spec.band, spec.grid, spec.lattice
    dt, h = grid.dt, lat.spacing_h

    var_step = band.sigma_hi_sq * dt
    if var_step > h * h * (1 + _REL_EPS):
        out.append(Violation("cfl", f"sigma_hi_sq*dt = {var_step!r} exceeds h^2 = {h * h!r}",
                             value=var_step - h * h))

    need = coverage_sigmas * math.sqrt(band.sigma_hi_sq * grid.horizon_T)
    have = lat.half_width_J * h
    if have < need * (1 - _REL_EPS):
        out.append(Violation("coverage", f"J*h = {have!r} < {coverage_sigmas} std devs = {need!r}",
                             value=need - have))

    L = spec.lipschitz_L
    if dt * L >= 0.5:
        out.append(Violation("picard", f"dt*L = {dt * L!r} must be < 1/2", value=dt * L))

    rng = np.random.default_rng(seed)
    k = n_lipschitz_samples
    t = rng.uniform(0.0, grid.horizon_T, k)
    xs = rng.uniform(-have, have, k)
    y1, y2 = rng.normal(0, 3, k), rng.normal(0, 3, k)
    z1, z2 = rng.normal(0, 3, k), rng.normal(0, 3, k)
    for idx in range(k):
        x_ = np.array([xs[idx]])
        fa = spec.generator_f(float(t[idx]), x_, np.array([y1[idx]]), np.array([z1[idx]]))
        fb = spec.generator_f(float(t[idx]), x_, np.array([y2[idx]]), np.array([z2[idx]]))
        lhs = float(np.abs(np.asarray(fa) - np.asarray(fb)).max())
        rhs = L * (abs(y1[idx] - y2[idx]) + abs(z1[idx] - z2[idx]))
        if lhs > rhs * (1 + 1e-9) + 1e-12:
            out.append(Violation("lipschitz",
                                 f"|f(y,z)-f(y',z')| = {lhs:.6g} > L(|dy|+|dz|) = {rhs:.6g} "
                                 f"at t={t[idx]:.4g}, x={xs[idx]:.4g}", value=lhs - rhs))
            break

    xi = spec.terminal_row()
    if not np.all(np.isfinite(xi)):
        out.append(Violation("terminal", "terminal values are not all finite"))
    if check_obstacle and spec.obstacle_S is not None:
        s_T = spec.obstacle_row(grid.n_steps)
        bad = np.nonzero(xi > s_T)[0]
        if bad.size:
            j0 = int(bad[0]) - lat.half_width_J
            out.append(Violation(
                "terminal-dominance",
                f"terminal dominance at node j={j0}: xi={xi[bad[0]]!r} > S_T={s_T[bad[0]]!r} "
                f"({bad.size} node(s) violate)",
                node=(grid.n_steps, j0), value=float(xi[bad[0]] - s_T[bad[0]])))
    return out


@dataclass
class CheckResult:
    """One named check: passes iff ``margin >= 0``."""

    name: str
    passed: bool
    margin: float
    tolerance: float
    anchor: str
    value: Optional[float] = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pass": bool(self.passed),
            "margin": _json_float(self.margin),
            "tolerance": _json_float(self.tolerance),
            "value": _json_float(self.value),
            "paper_anchor": self.anchor,
            "details": {k: _json_value(v) for k, v in self.details.items()},
        }


@dataclass
class DiagnosticsReport:
    checks: list[CheckResult] = field(default_factory=list)

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        return check

    def extend(self, other: "DiagnosticsReport") -> None:
        self.checks.extend(other.checks)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"pass": self.passed, "checks": [c.to_dict() for c in self.checks]}


def check(name: str, value: float, tolerance: float, anchor: str, *, upper: bool = True,
          **details) -> CheckResult:
    """``upper=True``: pass iff value <= tolerance; otherwise pass iff value >= tolerance."""
    value = float(value)
    margin = (tolerance - value) if upper else (value - tolerance)
    if math.isnan(margin):
        margin = -math.inf
    return CheckResult(name, margin >= 0, margin, float(tolerance), anchor, value, dict(details))


def _json_float(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return None
    return v


def _json_value(v):
    if isinstance(v, (bool, str)) or v is None:
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _json_float(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _json_value(x) for k, x in v.items()}
    return str(v)
