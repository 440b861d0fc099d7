from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgbsde.bsde import backward_solve
from rgbsde.comparison import (LinearCoefficients, SubmartingalePerturbation, brute_force_sup_increments,
                               comparison_check, drift_increments, is_lattice_submartingale,
                               linearized_duality_check, martingale_increments, one_step_sup_increments,
                               randomized_comparison_suite, randomized_variant_suite, submartingale_integral_check,
                               variant_compare)
from rgbsde.problems import (abs_z_generator, constant_generator, constant_terminal, make_spec, put, quadratic,
                             zero_generator)


@pytest.fixture(scope="module")
def spec():
    return make_spec(1.0, 2.0, 1.0, 100, quadratic())


@pytest.fixture(scope="module")
def classical():
    return make_spec(1.0, 1.0, 1.0, 200, constant_terminal(1.0))


class TestVariantCompare:
    def test_degenerate_perturbation_is_equality(self, spec):
        rep = variant_compare(spec, SubmartingalePerturbation(0.0), spec.terminal_xi, spec.generator_f)
        assert rep.passed
        assert rep["variant_equality"].value == 0.0

    def test_drift_shift_margin(self, spec):
        rep = variant_compare(spec, SubmartingalePerturbation(0.5), spec.terminal_xi, spec.generator_f)
        assert rep.passed
        y2 = backward_solve(spec).Y.values
        y1 = backward_solve(dataclasses.replace(spec, generator_f=constant_generator(-0.5).f)).Y.values
        gap = (y2 - y1)[:, 20:-20]
        expected = 0.5 * (1.0 - spec.grid.times)[:, None]
        np.testing.assert_allclose(gap, np.broadcast_to(expected, gap.shape), atol=1e-12)
        assert rep["variant_comparison"].value == pytest.approx(0.0, abs=1e-12)

    def test_put_below_zero(self):
        s2 = make_spec(1.0, 2.0, 1.0, 100, constant_terminal(0.0))
        rep = variant_compare(s2, SubmartingalePerturbation(0.0), put(), zero_generator().f)
        assert rep.passed
        assert "variant_equality" not in {c.name for c in rep.checks}

    def test_rejects_unordered_data(self, spec):
        with pytest.raises(ValueError, match="terminal"):
            variant_compare(spec, SubmartingalePerturbation(0.1), lambda x: spec.terminal_xi(x) + 1.0,
                            spec.generator_f)
        with pytest.raises(ValueError, match="drivers"):
            variant_compare(spec, SubmartingalePerturbation(0.1), spec.terminal_xi, constant_generator(1.0).f)

    def test_negative_rate(self):
        with pytest.raises(ValueError):
            SubmartingalePerturbation(-0.1)


class TestComparisonCheck:
    def test_ordered_pair(self, spec):
        large = dataclasses.replace(spec, generator_f=abs_z_generator(0.2, 0.5).f, lipschitz_L=0.5)
        small = dataclasses.replace(spec, terminal_xi=lambda x: 0.5 * np.asarray(x) ** 2,
                                    generator_f=abs_z_generator(0.0, 0.5).f, lipschitz_L=0.5)
        assert comparison_check(large, small).passed

    def test_rejects_mismatched_grids(self, spec):
        with pytest.raises(ValueError, match="share"):
            comparison_check(spec, make_spec(1.0, 2.0, 1.0, 50, quadratic()))


class TestSubmartingaleIntegral:
    def test_unit_drift(self, spec):
        X = np.ones((spec.grid.n_steps + 1, spec.lattice.n_nodes))
        K = drift_increments(1.0, spec)
        rep = submartingale_integral_check(X, K, K, spec)
        assert rep.passed
        assert rep["submartingale_integral"].value == pytest.approx(spec.dt)

    def test_zero_integrand(self, spec):
        X = np.zeros((spec.grid.n_steps + 1, spec.lattice.n_nodes))
        rep = submartingale_integral_check(X, drift_increments(1.0, spec), drift_increments(1.0, spec), spec)
        assert rep.passed and rep["submartingale_integral"].value == 0.0

    def test_sign_field(self, spec):
        X = np.sign(spec.x)[None, :] * np.ones((spec.grid.n_steps + 1, 1))
        rep = submartingale_integral_check(X, drift_increments(2.0, spec), drift_increments(1.0, spec), spec)
        assert rep.passed
        assert rep["endpoint_sufficiency"].passed

    @pytest.mark.parametrize("a1", [0.0, 0.5, 2.0])
    @pytest.mark.parametrize("a2", [0.0, 0.5, 2.0])
    def test_drift_products_with_random_steps(self, spec, a1, a2):
        rng = np.random.default_rng(int(10 * a1 + a2))
        X = rng.normal(size=(spec.grid.n_steps + 1, spec.lattice.n_nodes))
        assert submartingale_integral_check(X, drift_increments(a1, spec), drift_increments(a2, spec), spec).passed

    def test_solver_martingale_as_integrator(self, spec):
        K = martingale_increments(backward_solve(dataclasses.replace(spec, terminal_xi=lambda x: np.abs(x))))
        ok, m = is_lattice_submartingale(K, spec)
        assert ok and abs(m) <= 1e-12
        X = np.abs(np.sin(spec.x))[None, :] * np.ones((spec.grid.n_steps + 1, 1))
        assert submartingale_integral_check(X, K, drift_increments(1.0, spec), spec).passed

    def test_rejects_non_submartingale(self, spec):
        X = np.ones((spec.grid.n_steps + 1, spec.lattice.n_nodes))
        with pytest.raises(ValueError, match="K1"):
            submartingale_integral_check(X, drift_increments(-1.0, spec), drift_increments(1.0, spec), spec)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_endpoint_sup_dominates_enumeration(self, seed):
        spec = make_spec(1.0, 2.0, 1.0, 20, quadratic())
        field = np.random.default_rng(seed).normal(size=(20, spec.lattice.n_nodes, 3))
        assert np.all(brute_force_sup_increments(field, spec) <= one_step_sup_increments(field, spec) + 1e-12)


class TestLinearDuality:
    def test_zero_coefficients_exact(self, classical):
        rep = linearized_duality_check(LinearCoefficients(), lambda x: np.sin(x), None, classical)
        assert rep["duality_identity"].value <= 1e-12

    def test_growth_ode(self, classical):
        rep = linearized_duality_check(LinearCoefficients(a=0.3), constant_terminal(1.0), None, classical)
        assert rep.passed
        work = dataclasses.replace(classical, generator_f=lambda t, x, y, z: 0.3 * np.asarray(y) + 0 * x,
                                   lipschitz_L=0.3)
        assert backward_solve(work).Y0 == pytest.approx(math.exp(0.3), abs=5e-3)

    def test_inequality_with_unit_drift(self, classical):
        rep = linearized_duality_check(LinearCoefficients(), constant_terminal(1.0), lambda t, x: t + 0.0 * x,
                                       classical)
        assert rep["duality_inequality"].passed
        assert rep["duality_inequality"].value == pytest.approx(0.0, abs=1e-12)

    def test_general_coefficients_first_order(self):
        coeffs = LinearCoefficients(a=lambda t: 0.2 * math.cos(t), b=0.3, c=-0.1, d=0.2, m=0.5,
                                    n=lambda t: 0.1 * t)
        errs = []
        for n_steps in (50, 100, 200):
            spec = make_spec(1.0, 1.0, 1.0, n_steps, put())
            rep = linearized_duality_check(coeffs, lambda x: np.cos(x), lambda t, x: 0.5 * t + 0.0 * x, spec,
                                           identity_tol=1.0)
            assert rep["duality_inequality"].passed
            errs.append(rep["duality_identity"].value)
        assert errs[0] / errs[1] >= 1.8 and errs[1] / errs[2] >= 1.8, errs

    def test_rejects_uncertain_band(self, spec):
        with pytest.raises(ValueError, match="sigma_lo_sq == sigma_hi_sq"):
            linearized_duality_check(LinearCoefficients(), put(), None, spec)


class TestRandomSuites:
    def test_comparison_small(self, spec):
        res = randomized_comparison_suite(make_spec(1.0, 2.0, 1.0, 40, quadratic()), n_draws=8, seed=3)
        assert res.passed and res.details["violating_nodes"] == 0

    def test_variant_small(self):
        res = randomized_variant_suite(make_spec(1.0, 2.0, 1.0, 40, quadratic()), n_draws=8, seed=4)
        assert res.passed

    def test_thread_count_does_not_change_results(self):
        s = make_spec(1.0, 2.0, 1.0, 40, quadratic())
        a = randomized_variant_suite(s, n_draws=6, seed=5, threads=1)
        b = randomized_variant_suite(s, n_draws=6, seed=5, threads=3)
        assert a.margin == b.margin and a.details == b.details
