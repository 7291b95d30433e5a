import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radiant import metric_models as mm

SMALL = mm.SampleSpec(t_range=(1.0, 1e3), r_range=(1.0, 1e3), n_t=8, n_r=10, n_dirs=6)


class TestProfiles:
    def test_gamma_must_be_below_delta(self):
        with pytest.raises(mm.ModelError):
            mm.AsymptoticProfile(delta=1.0, gamma=1.0)

    def test_c_tau_above_one(self):
        with pytest.raises(mm.ModelError):
            mm.AsymptoticProfile(C_tau=1.0)

    def test_unknown_model(self):
        with pytest.raises(mm.ModelError):
            mm.make_model("kerr")

    def test_core_inside_horizon_rejected(self):
        with pytest.raises(mm.ModelError):
            mm.make_model("schwarzschild_tail", core=(1.5, 6.0))

    def test_custom_table_requires_table(self):
        with pytest.raises(mm.ModelError):
            mm.make_model("custom-table")


class TestCoefficients:
    def test_schwarzschild_exterior_is_exact(self, schwarzschild):
        """Beyond the core the inverse metric is the Schwarzschild one (M = 1)."""
        r = np.array([6.5, 10.0, 100.0])
        A, B, C, D = schwarzschild.radial_coeffs(np.zeros(3), r)
        f = 1.0 - 2.0 / r
        np.testing.assert_allclose(A, -1.0 / f, rtol=1e-14)
        np.testing.assert_allclose(C, f, rtol=1e-14)
        np.testing.assert_allclose(B, 0.0)
        np.testing.assert_allclose(D, 1.0)

    def test_schwarzschild_core_is_flat(self, schwarzschild):
        A, _, C, _ = schwarzschild.radial_coeffs(np.zeros(2), np.array([0.5, 2.5]))
        np.testing.assert_allclose(A, -1.0)
        np.testing.assert_allclose(C, 1.0)

    def test_minkowski_inverse_metric(self, minkowski):
        g = minkowski.inv_metric(np.array([[1.0, 2.0, -1.0, 0.5]]))
        np.testing.assert_allclose(g[0], np.diag([-1.0, 1, 1, 1]), atol=1e-15)

    @pytest.mark.parametrize("name", ["minkowski", "schwarzschild_tail", "radiating"])
    def test_spherical_symmetry(self, name):
        assert mm.is_spherically_symmetric(mm.make_model(name))

    def test_custom_table_matches_flat(self, tmp_path):
        r = np.linspace(0.0, 50.0, 201)
        rows = ["r,g_tt,g_tr,g_rr,g_ang"] + [f"{float(x)!r},-1.0,0.0,1.0,1.0" for x in r]
        p = tmp_path / "flat.csv"
        p.write_text("\n".join(rows) + "\n")
        model = mm.make_model("custom-table", table=mm.load_table(p))
        A, _, C, _ = model.radial_coeffs(np.zeros(3), np.array([1.0, 7.3, 20.0]))
        np.testing.assert_allclose(A, -1.0, atol=1e-12)
        np.testing.assert_allclose(C, 1.0, atol=1e-12)


class TestChart:
    @settings(max_examples=60, deadline=None)
    @given(t=st.floats(0.0, 1e4), r=st.floats(0.0, 1e4))
    def test_tau_zero_below_one(self, t, r):
        w = mm.flat_chart().weights(np.array([t, r, 0.0, 0.0]))
        assert 0 < float(w.tau_zero) < 1

    def test_weights_closed_form(self):
        t, r = 7.0, 3.0
        w = mm.flat_chart(10.0).weights(np.array([t, 0.0, r, 0.0]))
        u = t - r
        assert float(w.jap_r) == pytest.approx(np.sqrt(1 + r * r))
        assert float(w.tau_minus) == pytest.approx(np.sqrt(1 + u * u))
        assert float(w.tau_plus) == pytest.approx(10.0 + u + 2 * r)
        assert float(w.tau) == pytest.approx((10.0 + u + 2 * r) / np.sqrt(1 + r * r))

    @settings(max_examples=25, deadline=None)
    @given(t=st.floats(0.5, 100.0), x=st.lists(st.floats(-50, 50), min_size=3, max_size=3))
    def test_frame_fields_are_dual_to_u(self, t, x, schwarzschild):
        """d_u u = 1 and d~_i u = 0 for the Bondi frame."""
        if np.linalg.norm(x) < 1e-3:
            return
        chart = schwarzschild.chart
        p = np.array([t, *x])
        g = np.asarray(chart.grad_fn(p))
        e_u, e_i = mm.bondi_frame_fields(chart)
        assert float(np.dot(g, np.asarray(e_u(p)))) == pytest.approx(1.0, rel=1e-12)
        for e in e_i:
            assert abs(float(np.dot(g, np.asarray(e(p))))) < 1e-12


class TestAssumptions:
    def test_minkowski_ratios_vanish(self, minkowski):
        rep = mm.check_assumptions(minkowski, sample_spec=SMALL)
        assert rep.passed
        assert max(row["max_ratio"] for row in rep.rows) == 0.0

    def test_schwarzschild_passes_delta_one(self, schwarzschild):
        rep = mm.check_assumptions(schwarzschild, sample_spec=SMALL)
        assert rep.passed, rep.failures
        assert rep.ellipticity > 0

    def test_table_aggregates_rows(self, schwarzschild):
        rep = mm.check_assumptions(schwarzschild, sample_spec=SMALL)
        table = rep.table()
        assert {row["class"] for row in table} == set(mm.CLASS_NAMES)
        assert len(table) < len(rep.rows)
        assert rep.to_csv().startswith("class,k,|J|,max_ratio")

    def test_growing_perturbation_fails(self):
        """A coefficient that does not decay violates the bound with delta = 1."""
        prof = mm.AsymptoticProfile(delta=0.5, gamma=0.25, amplitude=0.1)
        model = mm.make_model("radiating", prof)
        rep = mm.check_assumptions(model, sample_spec=mm.SampleSpec(
            t_range=(1.0, 1e3), r_range=(1.0, 1e3), n_t=8, n_r=10, n_dirs=6, delta=1.5))
        assert not rep.passed


class TestSymbolFit:
    def test_recovers_power(self):
        fit = mm.symbol_order_fit(lambda p: 1.0 / (1.0 + p[:, 1] ** 2) ** 0.75, "exterior", ("r",))
        assert fit.r_power == pytest.approx(-1.5, abs=1e-6)

    def test_exact_zero(self):
        fit = mm.symbol_order_fit(lambda p: 0.0 * p[:, 0], "wave_zone")
        assert fit.exact_zero
