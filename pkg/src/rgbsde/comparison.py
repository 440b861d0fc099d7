"""Executable comparison properties for G-BSDEs on the lattice.

* ``comparison_check``: larger data gives a larger solution, nodewise.
* ``variant_compare``: the version where the smaller equation carries an
  extra G-submartingale ``K^1``, realised by a driver shift ``f1 - a``.
* ``submartingale_integral_check``: integrals of a step process against two
  lattice G-submartingales.
* ``linearized_duality_check``: the explicit linear-BSDE representation
  through the exponential process ``X``, in the single-volatility case.

Per-outcome increment fields have shape ``(n_steps, N, 3)`` with outcomes
ordered (up, mid, down), i.e. ``dB = +h, 0, -h``. At the two edge nodes
the lattice does not move, so only the mid outcome carries weight there.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bsde import GBsdeSolution, backward_solve
from .core_model import CheckResult, DiagnosticsReport, ProblemSpec, build_grid, check
from .sublinear import stencil_weights

ANCHOR_COMPARISON = "comparison theorem: xi1 >= xi2, f1 >= f2 gives Y1 >= Y2"
ANCHOR_VARIANT = "comparison with a G-submartingale perturbation: Y1 <= Y2"
ANCHOR_SUBMART_INT = "int X^+ dK1 + int X^- dK2 is a G-submartingale"
ANCHOR_DUALITY = "explicit solution of the linear G-BSDE through X"
ANCHOR_DUALITY_INEQ = "linearisation inequality for K = Y under X"

SUBMART_TOL = 1e-12
EQUALITY_TOL = 1e-12
N_BRUTE_V = 32


@dataclass(frozen=True)
class SubmartingalePerturbation:
    """Drift rate ``a >= 0`` of ``K^1_t = K_tilde_t + a*t``."""

    rate_a: float = 0.0

    def __post_init__(self):
        if not (self.rate_a >= 0):
            raise ValueError(f"rate_a must be >= 0, got {self.rate_a}")


def _const(c: float) -> Callable[[float], float]:
    return lambda t: float(c)


@dataclass(frozen=True)
class LinearCoefficients:
    """Deterministic coefficients of ``f = a y + b z + m`` and ``g = c y + d z + n``.

    Each field is a function of ``t``; floats are accepted and wrapped.
    """

    a: Callable[[float], float] = 0.0
    b: Callable[[float], float] = 0.0
    c: Callable[[float], float] = 0.0
    d: Callable[[float], float] = 0.0
    m: Callable[[float], float] = 0.0
    n: Callable[[float], float] = 0.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not callable(v):
                object.__setattr__(self, f.name, _const(v))

    def at(self, t: float) -> tuple[float, ...]:
        return tuple(float(getattr(self, k)(t)) for k in "abcdmn")

    def bound(self, times: np.ndarray) -> float:
        return max(abs(v) for t in times for v in self.at(float(t)))


# ---------------------------------------------------------------------------
# comparison theorem
# ---------------------------------------------------------------------------

def _same_grid(s1: ProblemSpec, s2: ProblemSpec):
    if s1.grid != s2.grid or s1.lattice != s2.lattice or s1.band != s2.band:
        raise ValueError("both problems must share band, time grid and lattice")


def sample_driver_order(f_small, f_large, spec: ProblemSpec, n_samples: int = 512, seed: int = 0) -> float:
    """``min (f_large - f_small)`` over random ``(t, x, y, z)`` samples."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, spec.grid.horizon_T, n_samples)
    x = rng.uniform(spec.x[0], spec.x[-1], n_samples)
    y, z = rng.normal(0, 5, n_samples), rng.normal(0, 5, n_samples)
    gaps = [float(np.min(np.asarray(f_large(t[k], x[k:k + 1], y[k:k + 1], z[k:k + 1]))
                          - np.asarray(f_small(t[k], x[k:k + 1], y[k:k + 1], z[k:k + 1]))))
            for k in range(n_samples)]
    return min(gaps)


def comparison_check(spec_large: ProblemSpec, spec_small: ProblemSpec, *, check_data: bool = True) -> CheckResult:
    """Solve both problems and report ``min(Y_large - Y_small)`` (pass iff ``>= 0``, exact)."""
    _same_grid(spec_large, spec_small)
    if check_data:
        if np.any(spec_large.terminal_row() < spec_small.terminal_row()):
            raise ValueError("terminal data not ordered: need xi_large >= xi_small at every node")
        if sample_driver_order(spec_small.generator_f, spec_large.generator_f, spec_large) < 0:
            raise ValueError("drivers not ordered: need f_large >= f_small")
    y1 = backward_solve(spec_large).Y.values
    y2 = backward_solve(spec_small).Y.values
    margin = float(np.min(y1 - y2))
    return check("comparison", margin, 0.0, ANCHOR_COMPARISON, upper=False)


def variant_compare(spec2: ProblemSpec, perturbation: SubmartingalePerturbation, xi1: Callable,
                    f1: Callable, *, check_data: bool = True) -> DiagnosticsReport:
    """Solve with ``(xi1, f1 - a)`` and compare against ``spec2``'s solution.

    With ``K_tilde`` the solver's decreasing G-martingale, ``Y^1`` then solves
    the equation perturbed by ``K^1 = K_tilde + a*t``, a G-submartingale.
    The report holds the order check and, for ``a = 0`` with identical data,
    the equality check at ``1e-12``.
    """
    a = perturbation.rate_a
    spec1 = dataclasses.replace(spec2, terminal_xi=xi1,
                                generator_f=lambda t, x, y, z: np.asarray(f1(t, x, y, z), dtype=float) - a)
    if check_data:
        if np.any(spec1.terminal_row() > spec2.terminal_row()):
            raise ValueError("terminal data not ordered: need xi1 <= xi2 at every node")
        if sample_driver_order(f1, spec2.generator_f, spec2) < 0:
            raise ValueError("drivers not ordered: need f1 <= f2")
    y1 = backward_solve(spec1).Y.values
    y2 = backward_solve(spec2).Y.values
    rep = DiagnosticsReport()
    margin = float(np.min(y2 - y1))
    rep.add(check("variant_comparison", margin, 0.0, ANCHOR_VARIANT, upper=False, rate_a=a))
    same_data = (a == 0 and xi1 is spec2.terminal_xi and f1 is spec2.generator_f)
    if same_data:
        rep.add(check("variant_equality", float(np.max(np.abs(y2 - y1))), EQUALITY_TOL, ANCHOR_VARIANT))
    return rep


# ---------------------------------------------------------------------------
# submartingale integrals
# ---------------------------------------------------------------------------

def _as_outcomes(field: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Broadcast a ``(n, N)`` or ``(n+1, N)`` deterministic increment field to outcomes."""
    n, N = spec.grid.n_steps, spec.lattice.n_nodes
    field = np.asarray(field, dtype=float)
    if field.shape == (n, N, 3):
        return field
    if field.shape in ((n, N), (n + 1, N)):
        return np.repeat(field[:n, :, None], 3, axis=2)
    raise ValueError(f"increment field must have shape ({n}, {N}, 3), ({n}, {N}) or ({n + 1}, {N}); got {field.shape}")


def outcome_expectation(field: np.ndarray, spec: ProblemSpec, v: float) -> np.ndarray:
    """``E_v`` of per-outcome increments at every node, shape ``(n, N)``."""
    w = stencil_weights(v, spec.dt, spec.lattice.spacing_h)
    out = w.p_up * field[..., 0] + w.p_mid * field[..., 1] + w.p_down * field[..., 2]
    out[:, 0] = field[:, 0, 1]
    out[:, -1] = field[:, -1, 1]
    return out


def one_step_sup_increments(field: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Endpoint sup over the band of ``E_v`` of per-outcome increments."""
    return np.maximum.reduce([outcome_expectation(field, spec, v) for v in spec.band.endpoints])


def brute_force_sup_increments(field: np.ndarray, spec: ProblemSpec, n_v: int = N_BRUTE_V) -> np.ndarray:
    """Same sup by enumerating ``n_v`` variance rates and all three outcomes per node."""
    vs = np.linspace(spec.band.sigma_lo_sq, spec.band.sigma_hi_sq, n_v)
    best = None
    for v in vs:
        r = float(v) * spec.dt / spec.lattice.spacing_h ** 2
        probs = (0.5 * r, 1.0 - r, 0.5 * r)
        e = sum(p * field[..., k] for k, p in enumerate(probs))
        e[:, 0], e[:, -1] = field[:, 0, 1], field[:, -1, 1]
        best = e if best is None else np.maximum(best, e)
    return best


def is_lattice_submartingale(increments: np.ndarray, spec: ProblemSpec, tol: float = SUBMART_TOL) -> tuple[bool, float]:
    """One-step G-expectation of the increments is ``>= -tol`` everywhere."""
    m = float(np.min(one_step_sup_increments(_as_outcomes(increments, spec), spec)))
    return m >= -tol, m


def drift_increments(alpha: float, spec: ProblemSpec) -> np.ndarray:
    """Increments of ``K_t = alpha*t``."""
    return np.full((spec.grid.n_steps, spec.lattice.n_nodes), alpha * spec.dt)


def martingale_increments(sol: GBsdeSolution) -> np.ndarray:
    """Per-outcome increments of the solver's ``K`` read off the backward equation.

    ``dK(o) = Y_{i+1}(o) - Y_i + dt*f(t_i, x, Y_i, Z_i) - Z_i*dB(o)``; its
    one-step G-expectation vanishes up to Picard tolerance.
    """
    spec = sol.spec
    Y, Z = sol.Y.values, sol.Z.values
    n, h = spec.grid.n_steps, spec.lattice.spacing_h
    out = np.empty((n, spec.lattice.n_nodes, 3))
    for i in range(n):
        f = np.asarray(spec.generator_f(spec.grid.t(i), spec.x, Y[i], Z[i]), dtype=float)
        base = -Y[i] + spec.dt * f
        nxt = Y[i + 1]
        up = np.concatenate([nxt[1:], nxt[-1:]])
        down = np.concatenate([nxt[:1], nxt[:-1]])
        out[i, :, 0] = up + base - Z[i] * h
        out[i, :, 1] = nxt + base
        out[i, :, 2] = down + base + Z[i] * h
    return out


def submartingale_integral_check(X: np.ndarray, K1: np.ndarray, K2: np.ndarray,
                                 spec: ProblemSpec) -> DiagnosticsReport:
    """One-step G-expectation of ``X^+ dK1 + X^- dK2`` is ``>= -1e-12`` at every node.

    ``X`` is a node field (constant over each time step); the endpoint sup is
    cross-checked against enumeration over a 32-point variance grid.
    """
    n, N = spec.grid.n_steps, spec.lattice.n_nodes
    X = np.asarray(X, dtype=float)
    if X.shape not in ((n, N), (n + 1, N)):
        raise ValueError(f"X must have shape ({n + 1}, {N}), got {X.shape}")
    k1, k2 = _as_outcomes(K1, spec), _as_outcomes(K2, spec)
    for name, k in (("K1", k1), ("K2", k2)):
        ok, m = is_lattice_submartingale(k, spec)
        if not ok:
            raise ValueError(f"{name} fails the lattice G-submartingale test (min one-step sup {m:.3g})")
    Xn = X[:n, :, None]
    inc = np.maximum(Xn, 0.0) * k1 + np.maximum(-Xn, 0.0) * k2
    sup = one_step_sup_increments(inc, spec)
    brute = brute_force_sup_increments(inc, spec)
    rep = DiagnosticsReport()
    rep.add(check("submartingale_integral", float(np.min(sup)), -SUBMART_TOL, ANCHOR_SUBMART_INT, upper=False))
    # endpoint sup must dominate every interior variance rate
    rep.add(check("endpoint_sufficiency", float(np.max(brute - sup)), SUBMART_TOL, ANCHOR_SUBMART_INT))
    return rep


# ---------------------------------------------------------------------------
# linear duality, single volatility
# ---------------------------------------------------------------------------

def _require_classical(spec: ProblemSpec) -> float:
    if not spec.band.is_classical:
        raise ValueError("linearized duality is only implemented for sigma_lo_sq == sigma_hi_sq")
    return spec.band.sigma_hi_sq


def linear_driver(coeffs: LinearCoefficients, v: float):
    """Lattice driver ``(a + c v) y + (b + d v) z + m + n v`` (``d<B>_t = v dt``)."""
    def f(t, x, y, z):
        a, b, c, d, m, n = coeffs.at(t)
        return (a + c * v) * np.asarray(y, dtype=float) + (b + d * v) * np.asarray(z, dtype=float) + m + n * v
    return f


def _x_ratios(coeffs: LinearCoefficients, v: float, t: float, dt: float, h: float) -> np.ndarray:
    """``X_{i+1}/X_i`` for the outcomes (up, mid, down)."""
    a, b, c, d, m, n = coeffs.at(t)
    drift = (a - b * d + c * v - 0.5 * d * d * v - 0.5 * b * b / v) * dt
    vol = d + b / v
    return np.exp(drift + vol * np.array([h, 0.0, -h]))


def _x_backward(spec: ProblemSpec, coeffs: LinearCoefficients, terminal: np.ndarray, source) -> np.ndarray:
    """``Phi_i = E[R * Phi_{i+1}] + source(i)`` on the trinomial lattice."""
    v = _require_classical(spec)
    n, h, dt = spec.grid.n_steps, spec.lattice.spacing_h, spec.dt
    w = stencil_weights(v, dt, h)
    phi = np.empty((n + 1, spec.lattice.n_nodes))
    phi[n] = terminal
    for i in range(n - 1, -1, -1):
        r = _x_ratios(coeffs, v, spec.grid.t(i), dt, h)
        nxt = phi[i + 1]
        row = nxt.copy()  # edge nodes do not move
        row[1:-1] = w.p_up * r[0] * nxt[2:] + w.p_mid * r[1] * nxt[1:-1] + w.p_down * r[2] * nxt[:-2]
        row[0] *= r[1]
        row[-1] *= r[1]
        phi[i] = row + source(i)
    return phi


def _interior(spec: ProblemSpec, width_sigmas: float) -> np.ndarray:
    lim = width_sigmas * math.sqrt(spec.band.sigma_hi_sq * spec.grid.horizon_T)
    return np.abs(spec.x) <= lim


def duality_representation(spec: ProblemSpec, coeffs: LinearCoefficients, xi_values: np.ndarray) -> np.ndarray:
    """``X_t^{-1} E_t[X_T xi + int (m + n v) X ds]`` at every node."""
    v = _require_classical(spec)
    dt = spec.dt

    def src(i):
        _, _, _, _, m, n = coeffs.at(spec.grid.t(i))
        return (m + n * v) * dt

    return _x_backward(spec, coeffs, np.asarray(xi_values, dtype=float), src)


def duality_inequality_rhs(spec: ProblemSpec, coeffs: LinearCoefficients, K: np.ndarray) -> np.ndarray:
    """``X_t^{-1} E_t[X_T K_T - int (a + c v) K X ds]`` at every node."""
    v = _require_classical(spec)
    dt = spec.dt
    K = np.asarray(K, dtype=float)

    def src(i):
        a, _, c, _, _, _ = coeffs.at(spec.grid.t(i))
        return -(a + c * v) * K[i] * dt

    return _x_backward(spec, coeffs, K[-1], src)


def _widened(spec: ProblemSpec, coverage_sigmas: float) -> ProblemSpec:
    grid, lattice = build_grid(spec.band, spec.grid.horizon_T, spec.grid.n_steps, coverage_sigmas,
                               spec.lattice.boundary_mode)
    return spec.with_grid(grid, lattice)


def linearized_duality_check(coeffs: LinearCoefficients, xi: Callable, K: Optional[Callable],
                             spec: ProblemSpec, *, identity_tol: float = 1e-3, width_sigmas: float = 3.0,
                             coverage_sigmas: float = 12.0) -> DiagnosticsReport:
    """Linear BSDE solved on the lattice vs. its explicit ``X``-representation.

    (a) identity with ``K = 0``: max error within ``width_sigmas`` std devs
    ``<= identity_tol``;
    (b) for a lattice submartingale ``K(t, x)``, ``K <= rhs`` there with
    slack ``>= -5*dt*(1 + max|K|)``.

    The two sides treat the edge nodes differently, so both run on a lattice
    widened to ``coverage_sigmas`` std devs before the window is compared.
    """
    v = _require_classical(spec)
    wide = _widened(spec, coverage_sigmas)
    L = coeffs.bound(wide.grid.times)
    work = dataclasses.replace(wide, terminal_xi=xi, generator_f=linear_driver(coeffs, v),
                               lipschitz_L=max(L * (1 + v), spec.lipschitz_L))
    xi_values = work.terminal_row()
    Y = backward_solve(work).Y.values
    rep_vals = duality_representation(wide, coeffs, xi_values)
    mask = _interior(wide, width_sigmas)
    err = float(np.max(np.abs(Y[:, mask] - rep_vals[:, mask])))
    rep = DiagnosticsReport()
    rep.add(check("duality_identity", err, identity_tol, ANCHOR_DUALITY, n_steps=spec.grid.n_steps))
    if K is not None:
        Kf = np.stack([np.broadcast_to(np.asarray(K(t, wide.x), dtype=float), wide.x.shape)
                       for t in wide.grid.times])
        ok, m = is_lattice_submartingale(_node_increments(Kf), wide)
        if not ok:
            raise ValueError(f"K fails the lattice G-submartingale test (min one-step sup {m:.3g})")
        rhs = duality_inequality_rhs(wide, coeffs, Kf)
        slack = float(np.min((rhs - Kf)[:, mask]))
        allowance = -5.0 * spec.dt * (1.0 + float(np.max(np.abs(Kf[:, mask]))))
        rep.add(check("duality_inequality", slack, allowance, ANCHOR_DUALITY_INEQ, upper=False))
    return rep


def _node_increments(K: np.ndarray) -> np.ndarray:
    """Per-outcome increments of a node field ``K``."""
    nxt = K[1:]
    up = np.concatenate([nxt[:, 1:], nxt[:, -1:]], axis=1)
    down = np.concatenate([nxt[:, :1], nxt[:, :-1]], axis=1)
    return np.stack([up, nxt, down], axis=2) - K[:-1, :, None]


# ---------------------------------------------------------------------------
# randomized suites
# ---------------------------------------------------------------------------

def random_piecewise_linear(rng: np.random.Generator, span: float = 4.0, n_knots: int = 6,
                            nonnegative: bool = False) -> Callable:
    knots = np.sort(rng.uniform(-span, span, n_knots))
    vals = rng.normal(0.0, 1.0, n_knots)
    if nonnegative:
        vals = np.abs(vals) * rng.uniform(0, 1, n_knots)

    def phi(x):
        return np.interp(np.asarray(x, dtype=float), knots, vals)
    return phi


@dataclass(frozen=True)
class DriverDraw:
    f_small: Callable
    f_large: Callable
    lipschitz: float
    depends_on_yz: bool


def random_driver_pair(rng: np.random.Generator, max_slope: float = 1.0) -> DriverDraw:
    """``f_small <= f_large`` pointwise.

    Drivers that see ``(y, z)`` get a strictly positive gap (at least 0.01),
    so Picard stopping at 1e-13 cannot reverse an order that holds only by
    equality.
    """
    c0, c1 = rng.normal(0, 1, 2)
    yz = bool(rng.integers(0, 2))
    a, b = (rng.uniform(-max_slope, max_slope, 2) if yz else (0.0, 0.0))
    use_abs = bool(rng.integers(0, 2))
    kappa = rng.uniform(0.01, 0.5) if yz else float(rng.choice([0.0, rng.uniform(0, 0.5)]))
    e1 = rng.uniform(0, 0.5)
    e2 = rng.uniform(0, 0.5 * max_slope) if yz else 0.0

    def f_small(t, x, y, z):
        x = np.asarray(x, dtype=float)
        zz = np.abs(z) if use_abs else np.asarray(z, dtype=float)
        return c0 + c1 * np.sin(x + t) + a * np.asarray(y, dtype=float) + b * zz

    def f_large(t, x, y, z):
        x = np.asarray(x, dtype=float)
        return f_small(t, x, y, z) + (kappa + e1 * (1.0 + np.cos(x)) + e2 * np.abs(z))

    return DriverDraw(f_small, f_large, max(abs(a), abs(b) + e2), yz)


def _seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def randomized_comparison_suite(spec: ProblemSpec, n_draws: int = 50, seed: int = 0,
                                threads: int = 1) -> CheckResult:
    """``n_draws`` ordered data pairs; counts nodes where ``Y_large < Y_small``."""

    def one(ss):
        rng = np.random.default_rng(ss)
        xi_small = random_piecewise_linear(rng)
        bump = random_piecewise_linear(rng, nonnegative=True)
        drv = random_driver_pair(rng)
        small = dataclasses.replace(spec, terminal_xi=xi_small, generator_f=drv.f_small,
                                    lipschitz_L=drv.lipschitz)
        large = dataclasses.replace(spec, terminal_xi=lambda x: xi_small(x) + bump(x),
                                    generator_f=drv.f_large, lipschitz_L=drv.lipschitz)
        y_l = backward_solve(large).Y.values
        y_s = backward_solve(small).Y.values
        return float(np.min(y_l - y_s)), int(np.count_nonzero(y_l < y_s))

    res = _map(one, _seeds(seed, n_draws), threads)
    margins = [m for m, _ in res]
    violations = sum(v for _, v in res)
    return CheckResult("comparison_randomized", violations == 0, min(margins), 0.0, ANCHOR_COMPARISON,
                       float(violations), {"n_draws": n_draws, "violating_nodes": violations,
                                           "min_margin": min(margins)})


def randomized_variant_suite(spec: ProblemSpec, n_draws: int = 50, seed: int = 0, threads: int = 1,
                             rate_range: tuple[float, float] = (0.0, 2.0)) -> CheckResult:
    """``n_draws`` instances of ``variant_compare`` with ``rate_a`` drawn from ``rate_range``.

    Every fifth draw uses ``rate_a = 0`` so the martingale edge case is covered.
    """

    def one(args):
        k, ss = args
        rng = np.random.default_rng(ss)
        xi1 = random_piecewise_linear(rng)
        bump = random_piecewise_linear(rng, nonnegative=True)
        drv = random_driver_pair(rng)
        rate = 0.0 if k % 5 == 0 else float(rng.uniform(*rate_range))
        spec2 = dataclasses.replace(spec, terminal_xi=lambda x: xi1(x) + bump(x), generator_f=drv.f_large,
                                    lipschitz_L=drv.lipschitz)
        rep = variant_compare(spec2, SubmartingalePerturbation(rate), xi1, drv.f_small, check_data=False)
        return rep["variant_comparison"].margin

    margins = _map(one, list(enumerate(_seeds(seed, n_draws))), threads)
    n_bad = sum(1 for m in margins if m < 0)
    return CheckResult("variant_randomized", n_bad == 0, min(margins), 0.0, ANCHOR_VARIANT, float(n_bad),
                       {"n_draws": n_draws, "violating_draws": n_bad})
