import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radiant import vector_field_calculus as vfc

ETA = np.diag([-1.0, 1.0, 1.0, 1.0])


def points(rng, n=12, t=(0.5, 20.0), r=(0.5, 15.0)):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.column_stack([rng.uniform(*t, n), d * rng.uniform(*r, n)[:, None]])


def cubic(x):
    t, a, b, c = x
    return t**3 - 2 * t * a * b + a**2 * c + 0.5 * b**3 - t * t * c + a


class TestFields:
    def test_s_in_time_components(self, minkowski, rng):
        """On Minkowski S = t d_t + x . d_x."""
        pts = points(rng)
        comps = vfc.field_components(vfc.vector_field("S"), minkowski.chart, pts)
        np.testing.assert_allclose(comps, pts, atol=1e-12)

    def test_bad_rotation_indices(self):
        with pytest.raises(ValueError):
            vfc.vector_field("Omega", i=1, j=1)

    def test_unknown_field(self):
        with pytest.raises(ValueError):
            vfc.vector_field("Z")

    def test_x_and_y_fields_carry_cutoff(self, minkowski):
        """X_j = (1 + chi_{<j}) K_0 with chi = 1 near u = 0."""
        p = np.array([[5.0, 5.0, 0.0, 0.0]])
        x3 = vfc.field_components(vfc.vector_field("Xj", index=3), minkowski.chart, p)
        k0 = vfc.field_components(vfc.vector_field("K0"), minkowski.chart, p)
        np.testing.assert_allclose(x3, 2 * k0)
        y = vfc.field_components(vfc.vector_field("Yj", index=2), minkowski.chart, p)
        np.testing.assert_allclose(y[0], [2.0, 0, 0, 0])

    def test_bracket_of_t_and_s(self, minkowski, rng):
        pts = points(rng)
        br = vfc.lie_bracket(vfc.vector_field("T"), vfc.vector_field("S"), minkowski.chart)(pts)
        np.testing.assert_allclose(br, np.tile([1.0, 0, 0, 0], (len(pts), 1)), atol=1e-12)


class TestCutoffs:
    @settings(max_examples=50, deadline=None)
    @given(s=st.floats(-5, 5), ds=st.floats(0, 1))
    def test_quintic_step_monotone(self, s, ds):
        a, b = float(vfc.quintic_step(s)), float(vfc.quintic_step(s + ds))
        assert 0.0 <= a <= b + 1e-15 <= 1.0 + 1e-15

    def test_chi_below_limits(self):
        assert float(vfc.chi_below(2, 0.0)) == 1.0
        assert float(vfc.chi_below(2, 9.0)) == 0.0


class TestDeformation:
    def test_killing_fields(self, minkowski, rng):
        pts = points(rng)
        for X in (vfc.vector_field("T"), vfc.vector_field("Omega", i=0, j=2)):
            np.testing.assert_allclose(vfc.deformation_pi(minkowski, X, pts).components, 0.0, atol=1e-12)

    def test_scaling_field(self, minkowski, rng):
        """pi^{ab}(S) = 2 eta^{ab} on Minkowski."""
        pts = points(rng)
        pi = vfc.deformation_pi(minkowski, vfc.vector_field("S"), pts)
        np.testing.assert_allclose(pi.components, np.broadcast_to(2 * ETA, pi.components.shape), atol=1e-11)
        assert pi.is_symmetric()

    def test_conformal_killing(self, minkowski, rng):
        """pi^{ab}(K) = 4 t eta^{ab} for K = (t^2 + r^2) d_t + 2 t r d_r."""
        pts = points(rng)
        pi = vfc.deformation_pi(minkowski, vfc.minkowski_conformal_killing(), pts).components
        np.testing.assert_allclose(pi, 4 * pts[:, 0, None, None] * ETA, atol=1e-10)

    def test_static_time_field(self, schwarzschild, rng):
        pi = vfc.deformation_pi(schwarzschild, vfc.vector_field("T"), points(rng)).components
        np.testing.assert_allclose(pi, 0.0, atol=1e-12)

    def test_bondi_components(self, radiating, rng):
        pi = vfc.deformation_pi(radiating, vfc.vector_field("K0"), points(rng), chart="bondi")
        assert pi.chart == "bondi" and pi.is_symmetric(1e-10)


class TestPotential:
    def test_constant_weight(self, minkowski, rng):
        np.testing.assert_allclose(vfc.conformal_potential(minkowski, "1", points(rng)), 0.0, atol=1e-13)

    def test_japanese_bracket_weight(self, minkowski, rng):
        """V = <r>^3 Delta <r>^{-1} = -3 / <r>^2 on Minkowski."""
        pts = points(rng)
        r = np.linalg.norm(pts[:, 1:], axis=1)
        v = vfc.conformal_potential(minkowski, "I", pts, verify=True)
        np.testing.assert_allclose(v, -3.0 / (1 + r * r), rtol=1e-10)


class TestEnergy:
    @settings(max_examples=20, deadline=None)
    @given(g=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
    def test_time_flux_density(self, g, minkowski):
        """T(N, d_t) = (phi_t^2 + |grad phi|^2)/2 on Minkowski."""
        p = np.array([[1.0, 2.0, 0.0, 0.0]])
        e = vfc.em_tensor(minkowski, p, np.array([g]), vfc.vector_field("T"))
        assert float(e.density[0]) == pytest.approx(0.5 * float(np.dot(g, g)), abs=1e-12)
        assert float(e.flux_density[0]) == pytest.approx(float(e.density[0]), abs=1e-12)

    def test_dominant_energy(self, schwarzschild, rng):
        pts = points(rng)
        grads = rng.normal(size=(len(pts), 4))
        e = vfc.em_tensor(schwarzschild, pts, grads, vfc.vector_field("K0"))
        assert np.all(e.density >= 0)

    def test_chi_needs_psi(self, minkowski):
        p = np.array([[1.0, 2.0, 0.0, 0.0]])
        with pytest.raises(ValueError):
            vfc.em_tensor(minkowski, p, np.ones((1, 4)), vfc.vector_field("T"), "I", 1.0)

    def test_multiplier_coefficients(self, radiating, rng):
        pts = points(rng)
        c = vfc.multiplier_coeffs(radiating, vfc.vector_field("Xj", index=3), "I", 1.0, pts)
        assert c.A.is_symmetric(1e-10)
        np.testing.assert_allclose(c.C_chi, 0.0, atol=1e-14)
        assert np.all(np.isfinite(c.B_chi))


class TestCommutator:
    def test_flat_scaling(self, minkowski, rng):
        """[box, S] phi = 2 box phi on Minkowski by both routes."""
        pts = points(rng, 16)
        c = vfc.commutator_apply(minkowski, vfc.vector_field("S"), cubic, pts)
        np.testing.assert_allclose(c.direct, 2 * c.box, atol=1e-10)
        np.testing.assert_allclose(c.formula, 2 * c.box, atol=1e-10)

    def test_rotations_commute(self, schwarzschild, rng):
        c = vfc.commutator_apply(schwarzschild, vfc.vector_field("Omega", i=0, j=1), cubic, points(rng))
        np.testing.assert_allclose(c.direct, 0.0, atol=1e-9)

    def test_general_field_routes_agree(self, radiating, rng):
        phi = lambda x: jnp.sin(x[0] - x[1]) * jnp.exp(-0.01 * jnp.sum(x[1:] ** 2))
        c = vfc.commutator_apply(radiating, vfc.vector_field("K0"), phi, points(rng), rtol=1e-7)
        np.testing.assert_allclose(c.direct, c.formula, rtol=1e-7, atol=1e-7)

    def test_axis_rejected(self, minkowski):
        with pytest.raises(vfc.PolarSingularityError):
            vfc.commutator_apply(minkowski, vfc.vector_field("S"), cubic, np.array([[1.0, 0, 0, 0]]))
