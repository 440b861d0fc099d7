"""Independent oracles for the upper-obstacle problem.

These routines deliberately avoid the stencil machinery of
:mod:`rgbsde.sublinear`: the G-heat step is written directly as
``u + dt*G(D2 u)`` with ``G(a) = (sigma_hi_sq*a^+ - sigma_lo_sq*a^-)/2``, and
the generator is evaluated explicitly at the step ``i+1`` values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_model import BoundaryMode, LatticeSurface, ProblemSpec, SurfaceKind

MAX_BRUTE_FORCE_STEPS = 12
MAX_POLICY_ENUMERATION_STEPS = 4


def _check_cfl(spec: ProblemSpec):
    var_step = spec.band.sigma_hi_sq * spec.dt
    h2 = spec.lattice.spacing_h ** 2
    if var_step > h2 * (1 + 1e-12):
        raise ValueError(f"CFL violated: sigma_hi_sq*dt = {var_step!r} > h^2 = {h2!r}")


def _explicit_step(u: np.ndarray, spec: ProblemSpec, i: int) -> np.ndarray:
    h = spec.lattice.spacing_h
    d2 = np.zeros_like(u)
    d2[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h)
    du = np.empty_like(u)
    du[1:-1] = (u[2:] - u[:-2]) / (2 * h)
    du[0] = (u[1] - u[0]) / h
    du[-1] = (u[-1] - u[-2]) / h
    f = np.asarray(spec.generator_f(spec.grid.t(i), spec.x, u, du), dtype=float)
    return u + spec.dt * (spec.band.G(d2) + f)


def _march(spec: ProblemSpec, project) -> LatticeSurface:
    _check_cfl(spec)
    n = spec.grid.n_steps
    u = np.empty((n + 1, spec.lattice.n_nodes))
    u[n] = spec.terminal_row()
    dirichlet = spec.lattice.boundary_mode == BoundaryMode.DIRICHLET
    for i in range(n - 1, -1, -1):
        u[i] = project(_explicit_step(u[i + 1], spec, i), i)
        if dirichlet:
            u[i, 0], u[i, -1] = u[n, 0], u[n, -1]
    return LatticeSurface(u, SurfaceKind.Y)


def solve_obstacle_fd(spec: ProblemSpec) -> LatticeSurface:
    """Explicit monotone scheme with projection ``u = min(S, u_tilde)``."""
    return _march(spec, lambda ut, i: np.minimum(spec.obstacle_row(i), ut))


def solve_penalized_fd(spec: ProblemSpec, n: float) -> LatticeSurface:
    """Same scheme with the penalty ``-n(u - S)^+`` solved implicitly at each node."""
    if n < 0:
        raise ValueError(f"penalty n must be >= 0, got {n}")
    budget = spec.dt * (spec.lipschitz_L + n)
    if budget >= 0.5:
        raise ValueError(f"dt*(L+n) = {budget:.6g} >= 1/2; refine the time grid")
    c = spec.dt * n

    def project(ut, i):
        s = spec.obstacle_row(i)
        out = ut.copy()
        over = ut > s
        # s + excess/(1+c) stays >= s and is order preserving in u and c under rounding
        out[over] = s[over] + (ut[over] - s[over]) / (1.0 + c)
        return out

    return _march(spec, project)


def _classical_probabilities(spec: ProblemSpec) -> tuple[float, float, float]:
    if not spec.band.is_classical:
        raise ValueError("optimal stopping oracle needs sigma_lo_sq == sigma_hi_sq")
    _check_cfl(spec)
    v = spec.band.sigma_hi_sq
    q = min(v * spec.dt / spec.lattice.spacing_h ** 2, 1.0) / 2.0
    return q, 1.0 - 2.0 * q, q


def _source(spec: ProblemSpec, i: int, x: np.ndarray) -> np.ndarray:
    # only (t, x) dependence is honoured here; y and z are pinned to 0
    zero = np.zeros_like(x, dtype=float)
    return np.asarray(spec.generator_f(spec.grid.t(i), x, zero, zero), dtype=float) * np.ones_like(x, dtype=float)


@dataclass(frozen=True)
class StoppingSolution:
    value: LatticeSurface
    stop: np.ndarray  # True where stopping is optimal (S <= continuation)


def optimal_stopping_oracle(spec: ProblemSpec) -> StoppingSolution:
    """Classical dynamic program ``u_i = min(S_i, E[u_{i+1}] + dt*f)``."""
    p_up, p_mid, p_down = _classical_probabilities(spec)
    n, N = spec.grid.n_steps, spec.lattice.n_nodes
    x = spec.x
    u = np.empty((n + 1, N))
    stop = np.zeros((n + 1, N), dtype=bool)
    u[n] = spec.terminal_row()
    stop[n] = True
    for i in range(n - 1, -1, -1):
        nxt = u[i + 1]
        cont = nxt.copy()
        cont[1:-1] = p_up * nxt[2:] + p_mid * nxt[1:-1] + p_down * nxt[:-2]
        cont = cont + spec.dt * _source(spec, i, x)
        s = spec.obstacle_row(i)
        stop[i] = s <= cont
        u[i] = np.where(stop[i], s, cont)
    return StoppingSolution(LatticeSurface(u, SurfaceKind.Y), stop)


def path_tree_stopping_value(spec: ProblemSpec) -> float:
    """Inf over all (path-dependent) stopping times, by enumerating every path from the root.

    Works on the non-recombining tree of the first ``n <= 12`` steps, so no
    Markov structure is assumed. Paths that would leave the lattice are
    rejected.
    """
    p = _classical_probabilities(spec)
    n = spec.grid.n_steps
    if n > MAX_BRUTE_FORCE_STEPS:
        raise ValueError(f"brute force limited to {MAX_BRUTE_FORCE_STEPS} steps, got {n}")
    if n > spec.lattice.half_width_J:
        raise ValueError("paths would reach the lattice boundary; widen the lattice")
    h = spec.lattice.spacing_h
    moves = np.array([1, 0, -1])
    # positions of every history at every level, histories in lexicographic order
    levels = [np.zeros(1, dtype=int)]
    for _ in range(n):
        levels.append((levels[-1][:, None] + moves[None, :]).reshape(-1))
    value = np.asarray(spec.terminal_xi(levels[n] * h), dtype=float) * np.ones(levels[n].shape)
    for k in range(n - 1, -1, -1):
        xk = levels[k] * h
        children = value.reshape(-1, 3)
        cont = p[0] * children[:, 0] + p[1] * children[:, 1] + p[2] * children[:, 2]
        cont = cont + spec.dt * _source(spec, k, xk)
        s = np.asarray(spec.obstacle_S(spec.grid.t(k), xk), dtype=float) * np.ones(xk.shape) \
            if spec.obstacle_S is not None else np.full(xk.shape, np.inf)
        value = np.minimum(s, cont)
    return float(value[0])


def enumerate_stopping_policies(spec: ProblemSpec) -> tuple[float, int]:
    """Exhaustive search over every Markov stopping rule on the reachable nodes.

    Returns ``(best value, number of policies)``. Only for ``n <= 4`` steps
    (``2**(n*n)`` policies).
    """
    p = _classical_probabilities(spec)
    n = spec.grid.n_steps
    if n > MAX_POLICY_ENUMERATION_STEPS:
        raise ValueError(f"policy enumeration limited to {MAX_POLICY_ENUMERATION_STEPS} steps, got {n}")
    h = spec.lattice.spacing_h
    nodes = [(i, j) for i in range(n) for j in range(-i, i + 1)]
    n_pol = 2 ** len(nodes)
    # bit b of the policy index says whether to stop at nodes[b]
    pol = np.arange(n_pol, dtype=np.int64)
    col = {node: b for b, node in enumerate(nodes)}
    js = np.arange(-n, n + 1)
    u = np.broadcast_to(np.asarray(spec.terminal_xi(js * h), dtype=float) * np.ones(js.shape),
                        (n_pol, js.size)).copy()
    for i in range(n - 1, -1, -1):
        ji = np.arange(-i, i + 1)
        xi_ = ji * h
        # u is indexed by j + (i+1) at level i+1
        up, mid, down = u[:, ji + 1 + (i + 1)], u[:, ji + (i + 1)], u[:, ji - 1 + (i + 1)]
        cont = p[0] * up + p[1] * mid + p[2] * down + spec.dt * _source(spec, i, xi_)[None, :]
        s = (np.asarray(spec.obstacle_S(spec.grid.t(i), xi_), dtype=float) * np.ones(xi_.shape)
             if spec.obstacle_S is not None else np.full(xi_.shape, np.inf))
        bits = np.array([col[(i, j)] for j in ji])
        stop_here = ((pol[:, None] >> bits[None, :]) & 1).astype(bool)
        u = np.where(stop_here, s[None, :], cont)
    return float(u[:, 0].min()), n_pol

