"""Named terminal payoffs, generators and obstacles, plus a spec factory.

Each builder returns a numpy-vectorised callable together with whatever
metadata the solvers need (Lipschitz constant, obstacle drift/loading).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core_model import BoundaryMode, ProblemSpec, VolatilityBand, build_grid


def quadratic(scale: float = 1.0):
    return lambda x: scale * np.asarray(x, dtype=float) ** 2


def put(strike: float = 0.0):
    """``min(x - K, 0)``."""
    return lambda x: np.minimum(np.asarray(x, dtype=float) - strike, 0.0)


def call(strike: float = 0.0):
    """``(x - K)^+``."""
    return lambda x: np.maximum(np.asarray(x, dtype=float) - strike, 0.0)


def constant_terminal(c: float):
    return lambda x: np.full(np.shape(x), float(c))


def linear_terminal(slope: float = 1.0, intercept: float = 0.0):
    return lambda x: intercept + slope * np.asarray(x, dtype=float)


TERMINALS: dict[str, Callable] = {
    "quadratic": quadratic,
    "put": put,
    "call": call,
    "constant": constant_terminal,
    "linear": linear_terminal,
}


@dataclass(frozen=True)
class GeneratorDef:
    f: Callable
    lipschitz: float


def zero_generator() -> GeneratorDef:
    return GeneratorDef(lambda t, x, y, z: np.zeros(np.broadcast(x, y, z).shape), 0.0)


def constant_generator(c: float) -> GeneratorDef:
    return GeneratorDef(lambda t, x, y, z: np.full(np.broadcast(x, y, z).shape, float(c)), 0.0)


def linear_generator(a: float = 0.0, b: float = 0.0, c: float = 0.0) -> GeneratorDef:
    """``a*y + b*z + c``."""
    def f(t, x, y, z):
        return a * np.asarray(y, dtype=float) + b * np.asarray(z, dtype=float) + c + 0.0 * np.asarray(x)
    return GeneratorDef(f, max(abs(a), abs(b)))


def abs_z_generator(c: float = 0.0, k: float = 1.0, a: float = 0.0) -> GeneratorDef:
    """``c + k*|z| + a*y``."""
    def f(t, x, y, z):
        return c + k * np.abs(np.asarray(z, dtype=float)) + a * np.asarray(y, dtype=float) + 0.0 * np.asarray(x)
    return GeneratorDef(f, max(abs(k), abs(a)))


GENERATORS: dict[str, Callable[..., GeneratorDef]] = {
    "zero": zero_generator,
    "constant": constant_generator,
    "linear": linear_generator,
    "abs_z": abs_z_generator,
}


@dataclass(frozen=True)
class ObstacleDef:
    S: Callable
    b: Callable
    sigma: Callable


def constant_obstacle(c: float) -> ObstacleDef:
    return ObstacleDef(lambda t, x: np.full(np.shape(x), float(c)),
                       lambda t, x: np.zeros(np.shape(x)), lambda t, x: np.zeros(np.shape(x)))


def linear_obstacle(s0: float = 0.0, b: float = 0.0, sigma: float = 0.0) -> ObstacleDef:
    """``S(t, x) = s0 + b*t + sigma*x``: drift ``b``, dB-loading ``sigma``."""
    return ObstacleDef(lambda t, x: s0 + b * t + sigma * np.asarray(x, dtype=float),
                       lambda t, x: np.full(np.shape(x), float(b)),
                       lambda t, x: np.full(np.shape(x), float(sigma)))


OBSTACLES: dict[str, Callable[..., ObstacleDef]] = {
    "constant": constant_obstacle,
    "linear": linear_obstacle,
}


def make_spec(sigma_lo_sq: float, sigma_hi_sq: float, T: float, n_steps: int, terminal: Callable,
              generator: Optional[GeneratorDef] = None, obstacle: Optional[ObstacleDef] = None,
              coverage_sigmas: float = 6.0, boundary_mode: BoundaryMode = BoundaryMode.CLAMP,
              name: str = "") -> ProblemSpec:
    band = VolatilityBand(float(sigma_lo_sq), float(sigma_hi_sq))
    grid, lattice = build_grid(band, T, n_steps, coverage_sigmas, boundary_mode)
    gen = generator or zero_generator()
    return ProblemSpec(
        band=band, grid=grid, lattice=lattice, terminal_xi=terminal, generator_f=gen.f,
        obstacle_S=None if obstacle is None else obstacle.S, lipschitz_L=gen.lipschitz,
        obstacle_b=None if obstacle is None else obstacle.b,
        obstacle_sigma=None if obstacle is None else obstacle.sigma, name=name,
    )


def binding_specs(n_steps: int = 32) -> dict[str, ProblemSpec]:
    """Test problems where the obstacle is active on a set of positive measure."""
    return {
        "put-source": make_spec(1.0, 2.0, 1.0, n_steps, put(), constant_generator(1.0),
                                constant_obstacle(0.0), name="put-source"),
        "absz-tilted": make_spec(1.0, 2.0, 1.0, n_steps, put(0.2), abs_z_generator(1.0, 0.5),
                                 linear_obstacle(0.2, 0.0, 0.3), name="absz-tilted"),
        "classical-put-source": make_spec(1.0, 1.0, 1.0, n_steps, put(), constant_generator(1.0),
                                          constant_obstacle(0.0), name="classical-put-source"),
    }


def stated_rate_spec(n_steps: int = 32) -> ProblemSpec:
    """``xi = min(x, 0)``, ``S = 0``, ``f = 0``, band (1, 2)."""
    return make_spec(1.0, 2.0, 1.0, n_steps, put(), None, constant_obstacle(0.0), name="put-zero-driver")
