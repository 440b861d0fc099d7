"""Conditional G-expectation on the lattice.

One step of the G-heat evolution is a three-point stencil whose variance
rate is chosen, node by node, to maximise the expectation. The stencil
expectation is affine in the variance rate, so the supremum over
``[sigma_lo_sq, sigma_hi_sq]`` is attained at an endpoint and only the two
endpoints are ever evaluated.

Floating-point contract: each per-variance expectation is a nonnegative
weighted sum evaluated in a fixed order and then clamped into the range of
the three stencil values. Both steps are order preserving under IEEE
rounding, which makes monotonicity and constant preservation hold bit for
bit, not just up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .core_model import BoundaryMode, LatticeSurface, ProblemSpec, SurfaceKind

_CFL_SLACK = 1e-12


@dataclass(frozen=True)
class StencilWeights:
    p_up: float
    p_mid: float
    p_down: float

    def __post_init__(self):
        for p in (self.p_up, self.p_mid, self.p_down):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"stencil probability {p!r} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p_up, self.p_mid, self.p_down)


def stencil_weights(v: float, dt: float, h: float) -> StencilWeights:
    """Mean-zero three-point law with variance ``v*dt`` on spacing ``h``."""
    if v < 0 or dt <= 0 or h <= 0:
        raise ValueError(f"need v >= 0, dt > 0, h > 0 (got v={v}, dt={dt}, h={h})")
    r = v * dt / (h * h)
    if r > 1.0 + _CFL_SLACK:
        raise ValueError(f"v*dt = {v * dt!r} > h^2 = {h * h!r}: stencil would not be monotone")
    r = min(r, 1.0)
    p = 0.5 * r
    return StencilWeights(p, 1.0 - r, p)


def _weights(spec: ProblemSpec) -> dict[float, StencilWeights]:
    return {v: stencil_weights(v, spec.dt, spec.lattice.spacing_h) for v in spec.band.endpoints}


def stencil_expectation(values: np.ndarray, w: StencilWeights) -> np.ndarray:
    """Interior stencil expectation of ``values`` (node axis last), width ``N-2``."""
    up, mid, down = values[..., 2:], values[..., 1:-1], values[..., :-2]
    e = w.p_up * up + w.p_mid * mid + w.p_down * down
    lo = np.minimum(np.minimum(up, mid), down)
    hi = np.maximum(np.maximum(up, mid), down)
    return np.minimum(np.maximum(e, lo), hi)


def _full_width(interior: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    out[..., 1:-1] = interior
    # zero second difference at |j| = J
    out[..., 0] = values[..., 0]
    out[..., -1] = values[..., -1]
    return out


def scenario_expectations(values_next: np.ndarray, spec: ProblemSpec) -> dict[float, np.ndarray]:
    """Full-width stencil expectation of ``values_next`` for each variance endpoint."""
    values_next = np.asarray(values_next, dtype=float)
    return {v: _full_width(stencil_expectation(values_next, w), values_next)
            for v, w in _weights(spec).items()}


def _sup_and_argmax(per_v: Mapping[float, np.ndarray], spec: ProblemSpec):
    band = spec.band
    if band.is_classical:
        (e,) = per_v.values()
        return e, np.full(e.shape, band.sigma_hi_sq)
    e_lo, e_hi = per_v[band.sigma_lo_sq], per_v[band.sigma_hi_sq]
    # ties resolve to sigma_hi_sq
    pick_hi = e_hi >= e_lo
    return np.where(pick_hi, e_hi, e_lo), np.where(pick_hi, band.sigma_hi_sq, band.sigma_lo_sq)


def one_step_sup(values_next: np.ndarray, spec: ProblemSpec, j: Optional[int] = None,
                 *, return_argmax: bool = False):
    """Sup over the variance band of the one-step stencil expectation.

    Returns the whole row (node axis last, leading batch axes allowed) or,
    with ``j`` given, the value at node ``j``.
    """
    per_v = scenario_expectations(values_next, spec)
    sup, arg = _sup_and_argmax(per_v, spec)
    if j is not None:
        col = spec.lattice.index(j)
        sup, arg = sup[..., col], arg[..., col]
    return (sup, arg) if return_argmax else sup


def _backward_rows(xi_values: np.ndarray, spec: ProblemSpec, n_back: int) -> list[np.ndarray]:
    rows = [np.asarray(xi_values, dtype=float)]
    dirichlet = spec.lattice.boundary_mode == BoundaryMode.DIRICHLET
    for _ in range(n_back):
        nxt = one_step_sup(rows[-1], spec)
        if dirichlet:
            nxt[..., 0] = rows[0][..., 0]
            nxt[..., -1] = rows[0][..., -1]
        rows.append(nxt)
    rows.reverse()
    return rows


def conditional_g_expectation(xi_values: np.ndarray, spec: ProblemSpec, to_step: int = 0) -> LatticeSurface:
    """Backward induction of ``one_step_sup`` from the terminal row down to ``to_step``.

    Row ``i >= to_step`` of the result is the conditional G-expectation at
    ``t_i``; rows below ``to_step`` are zero.
    """
    n = spec.grid.n_steps
    if not 0 <= to_step <= n:
        raise ValueError(f"to_step must lie in [0, {n}], got {to_step}")
    xi_values = np.asarray(xi_values, dtype=float)
    if xi_values.shape != (spec.lattice.n_nodes,):
        raise ValueError(f"terminal row must have shape ({spec.lattice.n_nodes},), got {xi_values.shape}")
    rows = _backward_rows(xi_values, spec, n - to_step)
    out = np.zeros((n + 1, spec.lattice.n_nodes))
    out[to_step:] = np.stack(rows)
    return LatticeSurface(out, SurfaceKind.Y)


def conditional_g_expectations(xi_rows: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Batch form of ``conditional_g_expectation``: shape ``(batch, n_steps + 1, n_nodes)``."""
    xi_rows = np.asarray(xi_rows, dtype=float)
    if xi_rows.ndim != 2 or xi_rows.shape[1] != spec.lattice.n_nodes:
        raise ValueError(f"terminal rows must have shape (batch, {spec.lattice.n_nodes}), got {xi_rows.shape}")
    return np.stack(_backward_rows(xi_rows, spec, spec.grid.n_steps), axis=1)


def g_expectation(xi_values: np.ndarray, spec: ProblemSpec, n_steps: Optional[int] = None):
    """G-expectation at ``(t=0, x=0)`` of a terminal row placed ``n_steps`` steps ahead.

    ``xi_values`` may carry leading batch axes; one value per batch entry is
    returned. ``n_steps`` defaults to the full grid.
    """
    n_back = spec.grid.n_steps if n_steps is None else int(n_steps)
    rows = _backward_rows(np.asarray(xi_values, dtype=float), spec, n_back)
    root = rows[0][..., spec.lattice.half_width_J]
    return float(root) if np.ndim(root) == 0 else root


def sup_accumulated(increments: Mapping[float, np.ndarray] | np.ndarray, spec: ProblemSpec) -> LatticeSurface:
    """Worst-case expected accumulated increments over volatility policies.

    ``increments`` holds per-node increments for each step ``i < n`` (rows
    ``0..n-1`` are used), either one array for all scenarios or a mapping
    variance -> array when the increment depends on the scenario. The result
    ``D`` solves ``D_n = 0``, ``D_i = max_v [q_v(i) + E_v D_{i+1}]`` and is the
    G-expectation of the accumulated path functional started at each node.
    """
    n, N = spec.grid.n_steps, spec.lattice.n_nodes
    if not isinstance(increments, Mapping):
        increments = {v: increments for v in spec.band.endpoints}
    weights = _weights(spec)
    D = np.zeros((n + 1, N))
    for i in range(n - 1, -1, -1):
        best = None
        for v, w in weights.items():
            cand = np.asarray(increments[v], dtype=float)[i] + _full_width(stencil_expectation(D[i + 1], w), D[i + 1])
            best = cand if best is None else np.maximum(best, cand)
        D[i] = best
    return LatticeSurface(D, SurfaceKind.DEFECT)
