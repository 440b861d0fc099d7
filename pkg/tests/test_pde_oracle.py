from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from rgbsde.bsde import solve_gbsde
from rgbsde.pde_oracle import (MAX_BRUTE_FORCE_STEPS, MAX_POLICY_ENUMERATION_STEPS, enumerate_stopping_policies,
                               optimal_stopping_oracle, path_tree_stopping_value, solve_obstacle_fd,
                               solve_penalized_fd)
from rgbsde.problems import (GeneratorDef, abs_z_generator, binding_specs, constant_generator, constant_obstacle,
                             constant_terminal, linear_generator, linear_obstacle, make_spec, put, quadratic)
from rgbsde.reflected import grid_for_penalty, solve_penalized


def _source(t, x, y, z):
    return np.sin(np.asarray(x)) * np.cos(t) + 0.0 * np.asarray(y)


class TestObstacleFd:
    @pytest.mark.parametrize("gen", [None, GeneratorDef(_source, 0.0), abs_z_generator(0.3, 0.7)])
    def test_non_binding_equals_plain_solve(self, gen):
        spec = make_spec(1.0, 2.0, 1.0, 80, lambda x: np.cos(x), gen, constant_obstacle(1e6))
        assert np.max(np.abs(solve_obstacle_fd(spec).values - solve_gbsde(spec).Y.values)) <= 1e-10

    def test_unit_source_is_clipped_to_zero(self):
        spec = make_spec(1.0, 2.0, 1.0, 40, constant_terminal(0.0), constant_generator(1.0), constant_obstacle(0.0))
        assert np.all(solve_obstacle_fd(spec).values == 0.0)

    def test_classical_matches_dynamic_program(self):
        spec = make_spec(1.0, 1.0, 1.0, 100, put(), None, constant_obstacle(0.0))
        dp = optimal_stopping_oracle(spec).value.values
        assert np.max(np.abs(solve_obstacle_fd(spec).values - dp)) <= 1e-10

    def test_classical_with_source_matches_dynamic_program(self):
        spec = binding_specs(64)["classical-put-source"]
        dp = optimal_stopping_oracle(spec).value.values
        assert np.max(np.abs(solve_obstacle_fd(spec).values - dp)) <= 1e-10

    def test_cfl_violation(self):
        spec = make_spec(1.0, 2.0, 1.0, 50, put(), None, constant_obstacle(0.0))
        lat = dataclasses.replace(spec.lattice, spacing_h=spec.lattice.spacing_h / 2)
        with pytest.raises(ValueError, match="CFL"):
            solve_obstacle_fd(spec.with_grid(spec.grid, lat))


class TestPenalizedFd:
    def test_zero_penalty_is_plain_solve(self):
        spec = make_spec(1.0, 2.0, 1.0, 60, quadratic(), GeneratorDef(_source, 0.0), constant_obstacle(1e6))
        assert np.max(np.abs(solve_penalized_fd(spec, 0.0).values - solve_gbsde(spec).Y.values)) <= 1e-10

    def test_far_obstacle_inactive(self):
        spec = make_spec(1.0, 2.0, 1.0, 256, quadratic(), None, constant_obstacle(1e6))
        assert np.max(np.abs(solve_penalized_fd(spec, 64.0).values - solve_gbsde(spec).Y.values)) <= 1e-10

    @pytest.mark.parametrize("name", ["put-source", "absz-tilted", "classical-put-source"])
    @pytest.mark.parametrize("n", [4.0, 32.0])
    def test_matches_lattice_penalisation(self, name, n):
        spec = grid_for_penalty(binding_specs(16)[name], n)
        lattice = solve_penalized(spec, n).Y.values
        assert np.max(np.abs(solve_penalized_fd(spec, n).values - lattice)) <= 1e-10

    def test_monotone_sandwich(self):
        # the u + dt*G(D2 u) form is order preserving only up to rounding
        tol = 1e-12
        spec = grid_for_penalty(binding_specs(16)["classical-put-source"], 256)
        proj = solve_obstacle_fd(spec).values
        prev = None
        for n in (4.0, 16.0, 64.0, 256.0):
            u = solve_penalized_fd(spec, n).values
            assert np.all(u >= proj - tol)
            if prev is not None:
                assert np.all(u <= prev + tol)
            prev = u
        assert np.max(prev - proj) < 0.02

    def test_rejects(self):
        spec = make_spec(1.0, 2.0, 1.0, 8, put(), None, constant_obstacle(0.0))
        with pytest.raises(ValueError, match="refine"):
            solve_penalized_fd(spec, 8.0)
        with pytest.raises(ValueError):
            solve_penalized_fd(spec, -1.0)

    def test_y_dependent_driver_mismatch_is_first_order(self):
        # the oracle evaluates f at step i+1; the lattice solve is implicit in y
        diffs = []
        for n_steps in (32, 64, 128):
            spec = make_spec(1.0, 2.0, 1.0, n_steps, put(), linear_generator(a=0.5, c=1.0),
                             constant_obstacle(0.0))
            diffs.append(np.max(np.abs(solve_penalized_fd(spec, 4.0).values - solve_penalized(spec, 4.0).Y.values)))
        assert diffs[0] > 1e-4
        ratios = [a / b for a, b in zip(diffs, diffs[1:])]
        assert all(1.7 <= r <= 2.3 for r in ratios), diffs


class TestStoppingOracle:
    @pytest.mark.parametrize("c", [-1.0, 0.0, 2.5])
    def test_constant_obstacle_equals_terminal(self, c):
        spec = make_spec(1.0, 1.0, 1.0, 10, constant_terminal(c), None, constant_obstacle(c))
        sol = optimal_stopping_oracle(spec)
        assert np.all(sol.value.values == c)
        assert np.all(sol.stop)

    def test_unit_source_stops_immediately(self):
        spec = make_spec(1.0, 1.0, 1.0, 10, constant_terminal(0.0), constant_generator(1.0), constant_obstacle(0.0))
        sol = optimal_stopping_oracle(spec)
        assert np.all(sol.value.values == 0.0)
        assert np.all(sol.stop)

    @pytest.mark.parametrize("n_steps", [1, 4, 10, 12])
    @pytest.mark.parametrize("problem", ["put", "put-source", "tilted"])
    def test_dp_equals_path_enumeration(self, n_steps, problem):
        gen = constant_generator(1.0) if problem == "put-source" else None
        obstacle = linear_obstacle(0.1, -0.2, 0.4) if problem == "tilted" else constant_obstacle(0.0)
        terminal = put(0.1 - 0.2) if problem == "tilted" else put()
        spec = make_spec(1.0, 1.0, 1.0, n_steps, terminal, gen, obstacle)
        dp = optimal_stopping_oracle(spec).value.root()
        assert abs(dp - path_tree_stopping_value(spec)) <= 1e-12

    @pytest.mark.parametrize("n_steps", [1, 2, 3, 4])
    def test_dp_equals_policy_enumeration(self, n_steps):
        spec = make_spec(1.0, 1.0, 1.0, n_steps, put(), constant_generator(1.0), constant_obstacle(0.0))
        best, count = enumerate_stopping_policies(spec)
        assert count == 2 ** (n_steps * n_steps)
        assert abs(optimal_stopping_oracle(spec).value.root() - best) <= 1e-12

    def test_limits_and_band(self):
        with pytest.raises(ValueError, match="sigma_lo_sq == sigma_hi_sq"):
            optimal_stopping_oracle(make_spec(1.0, 2.0, 1.0, 4, put(), None, constant_obstacle(0.0)))
        big = make_spec(1.0, 1.0, 1.0, MAX_BRUTE_FORCE_STEPS + 1, put(), None, constant_obstacle(0.0))
        with pytest.raises(ValueError, match="limited"):
            path_tree_stopping_value(big)
        mid = make_spec(1.0, 1.0, 1.0, MAX_POLICY_ENUMERATION_STEPS + 1, put(), None, constant_obstacle(0.0))
        with pytest.raises(ValueError, match="limited"):
            enumerate_stopping_policies(mid)
