import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radiant import elliptic_solver as es

R = es.radial_grid(10.0, 0.01)


class TestLaplacian:
    def test_gaussian_oracle(self):
        """Delta e^{-r^2} = (4 r^2 - 6) e^{-r^2}."""
        lap = es.laplacian_l(0, np.exp(-R * R), R)
        exact = (4 * R * R - 6) * np.exp(-R * R)
        assert np.max(np.abs(lap[:-1] - exact[:-1])) < 1e-3

    def test_inverse_recovers_gaussian(self):
        phi = es.poisson_inverse(0, (4 * R * R - 6) * np.exp(-R * R), R)
        assert np.max(np.abs(phi - np.exp(-R * R))) < 1e-4

    def test_dipole_oracle(self):
        """Delta_1 (r e^{-r^2}) = (4 r^3 - 10 r) e^{-r^2}; the solution decays like r^{-2}."""
        phi = es.poisson_inverse(1, (4 * R**3 - 10 * R) * np.exp(-R * R), R)
        assert np.max(np.abs(phi - R * np.exp(-R * R))) < 1e-4

    def test_second_order(self):
        errs = []
        for h in (0.04, 0.02):
            r = es.radial_grid(10.0, h)
            phi = es.poisson_inverse(0, (4 * r * r - 6) * np.exp(-r * r), r)
            errs.append(np.max(np.abs(phi - np.exp(-r * r))))
        assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)

    def test_slowly_decaying_source(self):
        with pytest.raises(es.EllipticError):
            es.poisson_inverse(0, 1.0 / (1 + R), R)


class TestProblem:
    def test_not_elliptic(self):
        with pytest.raises(es.EllipticError):
            es.RadialEllipticProblem(0, R, -np.ones_like(R), np.ones_like(R), np.zeros_like(R))

    def test_grid_must_start_at_axis(self):
        r = R + 0.1
        with pytest.raises(es.EllipticError):
            es.RadialEllipticProblem(0, r, np.ones_like(r), np.ones_like(r), np.zeros_like(r))

    def test_decay_constant(self):
        p = es.bump_problem(0.3, 0, R, delta=1.0)
        assert p.decay_constant(1.0) == pytest.approx(0.3)


class TestNeumann:
    def test_flat_single_term(self):
        p = es.RadialEllipticProblem(0, R, np.ones_like(R), np.ones_like(R), es.gaussian_source(R, 0))
        res = es.neumann_solve(p, 3)
        assert res.residuals[1] <= 1e-10 * res.residuals[0]
        assert res.exact_residual < 1e-10

    def test_schwarzschild_contracts(self, schwarzschild):
        r = es.radial_grid(60.0, 0.02)
        res = es.neumann_solve(es.model_problem(schwarzschild, 100.0, 0, r), 10)
        assert res.verdict == "converged"
        assert max(res.ratios) <= 0.9
        assert all(b <= a for a, b in zip(res.residuals, res.residuals[1:]))

    @pytest.mark.parametrize("l", [0, 1, 2])
    def test_truncation_identity(self, l):
        """P(phi~ - phi) = -R^{k+1} F up to round-off."""
        res = es.neumann_solve(es.bump_problem(0.4, l, R), 6)
        assert res.exact_residual < 1e-8

    def test_large_deviation_diverges(self):
        res = es.neumann_solve(es.bump_problem(5.0, 0, R, delta=0.5), 12)
        assert res.verdict == "Neumann divergence"

    def test_needs_a_term(self):
        with pytest.raises(ValueError):
            es.neumann_solve(es.bump_problem(0.1, 0, R), 0)


class TestWeighted:
    @pytest.mark.parametrize("a", [-0.25, 0.5, 1.25])
    def test_finite_in_range(self, a, schwarzschild):
        out = es.weighted_elliptic_ratio(schwarzschild, a, es.EnsembleSpec(count=9))
        assert np.isfinite(out["max_ratio"]) and out["max_ratio"] > 0

    @settings(max_examples=10, deadline=None)
    @given(lam=st.floats(1e-3, 1e3), sign=st.sampled_from([-1.0, 1.0]))
    def test_scale_invariant(self, lam, sign):
        r = es.radial_grid(30.0, 0.05)
        p = es.bump_problem(0.2, 1, r, F=np.zeros_like(r))
        phi = r * np.exp(-((r - 4.0) ** 2))
        assert es.elliptic_ratio(p, sign * lam * phi) == pytest.approx(es.elliptic_ratio(p, phi), rel=1e-10)

    def test_tail_sweep_outside_range(self):
        assert es.tail_scale_sweep(2.5)["growth"] >= 10

    def test_tail_sweep_inside_range(self):
        assert es.tail_scale_sweep(0.5)["growth"] < 2
