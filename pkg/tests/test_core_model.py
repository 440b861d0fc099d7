from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgbsde.core_model import (BoundaryMode, CheckResult, DiagnosticsReport, LatticeSurface, ProblemSpec,
                               SpatialLattice, SurfaceKind, TimeGrid, VolatilityBand, build_grid, check,
                               validate_spec)
from rgbsde.problems import call, constant_obstacle, linear_generator, make_spec, put
from rgbsde.sublinear import stencil_weights


class TestVolatilityBand:
    @pytest.mark.parametrize("lo, hi", [(0.0, 1.0), (-1.0, 1.0), (2.0, 1.0)])
    def test_rejects_degenerate_or_inverted(self, lo, hi):
        with pytest.raises(ValueError):
            VolatilityBand(lo, hi)

    @given(st.floats(-50, 50), st.floats(0.1, 3), st.floats(0, 3))
    def test_G_formula(self, a, lo, width):
        band = VolatilityBand(lo, lo + width)
        expected = 0.5 * (band.sigma_hi_sq * max(a, 0.0) - band.sigma_lo_sq * max(-a, 0.0))
        assert float(band.G(a)) == pytest.approx(expected, abs=1e-12)

    def test_endpoints(self):
        assert VolatilityBand(1, 2).endpoints == (1, 2)
        assert VolatilityBand(1.5, 1.5).endpoints == (1.5,)
        assert VolatilityBand(1.5, 1.5).is_classical


class TestTimeGrid:
    @given(st.floats(0.01, 10), st.integers(1, 5000))
    def test_terminal_time_exact(self, T, n):
        g = TimeGrid(T, n)
        assert g.t(n) == T
        assert g.times[0] == 0.0 and g.times[-1] == T
        assert np.all(np.diff(g.times) > 0)

    @pytest.mark.parametrize("T, n", [(0.0, 10), (-1.0, 10), (1.0, 0), (1.0, 2.5)])
    def test_rejects_bad_input(self, T, n):
        with pytest.raises(ValueError):
            TimeGrid(T, n)


class TestBuildGrid:
    @pytest.mark.parametrize("lo, hi, T, n, dt, h, J", [
        (1, 2, 1, 200, 0.005, 0.1, 85),
        (1, 1, 1, 1, 1.0, 1.0, 6),
        (4, 4, 1, 400, 0.0025, 0.1, 120),
    ])
    def test_examples(self, lo, hi, T, n, dt, h, J):
        grid, lat = build_grid(VolatilityBand(lo, hi), T, n, 6.0)
        assert grid.dt == pytest.approx(dt, rel=1e-15)
        assert lat.spacing_h == pytest.approx(h, rel=1e-14)
        assert lat.half_width_J == J
        assert lat.n_nodes == 2 * J + 1

    @pytest.mark.parametrize("T, n, cov", [(0.0, 10, 6), (-1.0, 10, 6), (1.0, 0, 6), (1.0, 10, 0.5)])
    def test_rejects(self, T, n, cov):
        with pytest.raises(ValueError):
            build_grid(VolatilityBand(1, 2), T, n, cov)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.2, 3.0), st.floats(0.0, 3.0), st.floats(0.1, 4.0), st.integers(1, 300),
           st.floats(1.0, 10.0))
    def test_output_is_valid_and_monotone(self, lo, width, T, n, cov):
        band = VolatilityBand(lo, lo + width)
        grid, lat = build_grid(band, T, n, cov)
        spec = ProblemSpec(band, grid, lat, put(), obstacle_S=constant_obstacle(0.0).S)
        assert validate_spec(spec, coverage_sigmas=cov) == []
        for v in band.endpoints:
            w = stencil_weights(v, grid.dt, lat.spacing_h)
            assert all(0.0 <= p <= 1.0 for p in w.as_tuple())


class TestValidateSpec:
    def test_cfl_boundary_equality_is_valid(self):
        band = VolatilityBand(1.0, 2.0)
        spec = ProblemSpec(band, TimeGrid(1.0, 200), SpatialLattice(0.1, 85), put(),
                           obstacle_S=constant_obstacle(0.0).S)
        assert validate_spec(spec) == []

    def test_terminal_dominance_violation_names_positive_node(self):
        spec = make_spec(1, 2, 1, 50, call(), obstacle=constant_obstacle(0.0))
        bad = validate_spec(spec)
        assert [v.code for v in bad] == ["terminal-dominance"]
        i, j = bad[0].node
        assert i == 50 and j > 0
        assert "terminal dominance at node j=" in bad[0].message

    def test_put_below_zero_ceiling_is_valid(self):
        assert validate_spec(make_spec(1, 2, 1, 50, put(), obstacle=constant_obstacle(0.0))) == []

    def test_cfl_violation(self):
        spec = ProblemSpec(VolatilityBand(1, 2), TimeGrid(1.0, 100), SpatialLattice(0.1, 100), put())
        assert "cfl" in {v.code for v in validate_spec(spec)}

    def test_coverage_violation(self):
        spec = ProblemSpec(VolatilityBand(1, 2), TimeGrid(1.0, 200), SpatialLattice(0.1, 40), put())
        codes = {v.code for v in validate_spec(spec)}
        assert codes == {"coverage"}

    def test_picard_violation(self):
        spec = make_spec(1, 2, 1, 4, put(), linear_generator(a=3.0))
        assert "picard" in {v.code for v in validate_spec(spec)}

    def test_lipschitz_violation(self):
        spec = make_spec(1, 2, 1, 50, put(), linear_generator(a=2.0))
        spec = ProblemSpec(spec.band, spec.grid, spec.lattice, spec.terminal_xi, spec.generator_f,
                           lipschitz_L=0.5)
        assert "lipschitz" in {v.code for v in validate_spec(spec)}

    def test_non_finite_terminal(self):
        spec = make_spec(1, 2, 1, 20, lambda x: np.where(np.asarray(x) > 1, np.inf, 0.0))
        assert "terminal" in {v.code for v in validate_spec(spec)}


class TestLatticeSurface:
    def test_rejects_non_finite_and_wrong_rank(self):
        with pytest.raises(ValueError):
            LatticeSurface(np.array([[0.0, np.nan]]))
        with pytest.raises(ValueError):
            LatticeSurface(np.zeros(3))

    def test_read_only_copy_and_root(self):
        src = np.arange(6.0).reshape(2, 3)
        s = LatticeSurface(src, SurfaceKind.Z)
        src[0, 1] = 99.0
        assert s.root() == 1.0
        with pytest.raises(ValueError):
            s.values[0, 0] = 1.0
        assert s.kind is SurfaceKind.Z

    def test_matches(self):
        grid, lat = build_grid(VolatilityBand(1, 1), 1.0, 4)
        assert LatticeSurface(np.zeros((5, lat.n_nodes))).matches(grid, lat)
        assert not LatticeSurface(np.zeros((4, lat.n_nodes))).matches(grid, lat)


class TestLattice:
    def test_index_and_boundary_mode(self):
        lat = SpatialLattice(0.5, 3, "dirichlet-from-terminal-extension")
        assert lat.boundary_mode is BoundaryMode.DIRICHLET
        assert lat.index(-3) == 0 and lat.index(3) == 6
        assert lat.x[lat.index(2)] == 1.0
        with pytest.raises(IndexError):
            lat.index(4)

    def test_refined_keeps_coverage(self):
        spec = make_spec(1, 2, 1, 16, put())
        fine = spec.refined(4)
        assert fine.grid.n_steps == 64
        assert fine.lattice.half_width_J * fine.lattice.spacing_h >= 6 * math.sqrt(2) * (1 - 1e-12)
        assert validate_spec(fine) == []


class TestChecks:
    def test_check_margins(self):
        c = check("x", 0.5, 1.0, "anchor")
        assert c.passed and c.margin == 0.5
        c = check("x", 0.5, 1.0, "anchor", upper=False)
        assert not c.passed and c.margin == -0.5
        assert not check("x", math.nan, 1.0, "anchor").passed

    def test_report_serialisation(self):
        rep = DiagnosticsReport()
        rep.add(check("a", 0.0, 0.0, "anchor", arr=np.array([1.0, np.inf])))
        rep.add(CheckResult("b", False, -1.0, 0.0, "anchor"))
        d = rep.to_dict()
        assert d["pass"] is False
        first = d["checks"][0]
        assert set(first) == {"name", "pass", "margin", "tolerance", "value", "paper_anchor", "details"}
        assert first["details"]["arr"] == [1.0, None]
        assert rep["b"].margin == -1.0
        with pytest.raises(KeyError):
            rep["missing"]
