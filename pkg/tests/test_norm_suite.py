import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from radiant import metric_models as mm
from radiant import norm_suite as ns
from radiant import wave_solver as ws

R = np.linspace(0.0, 12.0, 6001)
TIMES = np.linspace(0.0, 1.0, 11)


def gauss_field(times=TIMES, r=R, lam=1.0):
    return ns.field_from_function(lambda t, r: lam * np.exp(-r * r) + 0 * t, times, r,
                                  dt_fn=lambda t, r: 0 * t * r)


def jap(r):
    return np.sqrt(1 + r * r)


class TestFixedTime:
    def test_l2grad_oracle(self, minkowski):
        """||grad e^{-r^2}||^2 = int 4 r^4 e^{-2 r^2} dr for a unit-normalized l = 0 mode."""
        exact = np.sqrt(quad(lambda r: 4 * r**4 * np.exp(-2 * r * r), 0, np.inf)[0])
        v = ns.fixedtime_norm("L2grad", gauss_field(), minkowski, t=0.5)
        assert v.value == pytest.approx(exact, rel=1e-6)
        assert v.err_est < 1e-5

    def test_ce_oracle(self, minkowski):
        """CE of a static field: tau_+ tau_0 = <u> multiplies grad, tau_+ multiplies (d_r, 1/r)."""
        t, C = 0.5, 10.0
        u = lambda r: t - r
        tp = lambda r: C + u(r) + 2 * r
        d = lambda r: -2 * r * np.exp(-r * r)
        f = lambda r: np.exp(-r * r)
        a = quad(lambda r: jap(u(r)) ** 2 * d(r) ** 2 * r * r, 0, 12)[0]
        b = quad(lambda r: tp(r) ** 2 * (d(r) ** 2 + f(r) ** 2 / r**2) * r * r, 0, 12)[0]
        exact = np.sqrt(a) + np.sqrt(b)
        errs = []
        for n in (3001, 6001):
            r = np.linspace(0.0, 12.0, n)
            errs.append(exact - ns.fixedtime_norm("CE", gauss_field(r=r), minkowski, t=t,
                                                  estimate_error=False).value)
        # the l = 0 term r^{-1} f loses half a cell at the axis: first order in dr
        assert abs(errs[1]) < 1e-3 * exact
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.02)

    def test_missing_snapshot(self, minkowski):
        with pytest.raises(ns.SamplingError):
            ns.fixedtime_norm("CE", gauss_field(), minkowski, t=0.55)

    def test_h_norm_scope(self):
        with pytest.raises(ns.ScopeError):
            ns.h_norm_modes({0: np.zeros(5)}, {}, np.linspace(0, 1, 5), s=1, k=1)

    def test_h_norm_zero_order(self):
        """With k = 0, H^{0,a}_0 is ||<r>^a grad f||."""
        f0 = np.exp(-R * R)
        exact = np.sqrt(quad(lambda r: (1 + r * r) * 4 * r**4 * np.exp(-2 * r * r), 0, np.inf)[0])
        assert ns.h_norm_modes({0: f0}, {}, R, a=1.0, k=0) == pytest.approx(exact, rel=1e-5)


class TestSpacetime:
    def test_le_oracle(self, minkowski):
        """Sharp dyadic blocks <r> in [2^i, 2^{i+1}) of the LE densities."""
        part = ns.DyadicPartition("r")
        g1 = lambda r: 4 * r * r * np.exp(-2 * r * r) / jap(r) * r * r
        g0 = lambda r: np.exp(-2 * r * r) / jap(r) ** 3 * r * r
        b1 = b0 = 0.0
        for i in range(6):
            lo, hi = part.edges(i)
            hi = min(hi, 12.0)
            if lo >= hi:
                break
            b1 = max(b1, quad(g1, lo, hi)[0])
            b0 = max(b0, quad(g0, lo, hi)[0])
        v = ns.spacetime_norm("LE", gauss_field(), minkowski, interval=(0.0, 1.0))
        assert v.value == pytest.approx(np.sqrt(b1) + np.sqrt(b0), rel=2e-3)

    @settings(max_examples=10, deadline=None)
    @given(lam=st.floats(-50, 50).filter(lambda x: abs(x) > 1e-3),
           kind=st.sampled_from(["LE", "LE*", "NLE", "S", "N"]))
    def test_homogeneous(self, lam, kind, minkowski):
        r = np.linspace(0, 12, 241)
        base = ns.spacetime_norm(kind, gauss_field(r=r), minkowski, interval=(0, 1), estimate_error=False).value
        scaled = ns.spacetime_norm(kind, gauss_field(r=r, lam=lam), minkowski, interval=(0, 1),
                                   estimate_error=False).value
        assert scaled == pytest.approx(abs(lam) * base, rel=1e-10)

    def test_triangle_inequality(self, minkowski):
        r = np.linspace(0, 12, 241)
        f = gauss_field(r=r)
        g = ns.field_from_function(lambda t, r: np.sin(r) * np.exp(-0.2 * r) * (1 + t), TIMES, r)
        a, b = (ns.spacetime_norm("LE", x, minkowski, interval=(0, 1)).value for x in (f, g))
        assert ns.spacetime_norm("LE", f.plus(g), minkowski, interval=(0, 1)).value <= a + b + 1e-12

    def test_coarse_sampling(self, minkowski):
        f = ns.field_from_function(lambda t, r: np.exp(-r * r) + 0 * t, np.array([0.0, 4.0]), R)
        with pytest.raises(ns.SamplingError):
            ns.spacetime_norm("LE", f, minkowski, interval=(0.0, 4.0))

    def test_unknown_kind(self, minkowski):
        with pytest.raises(ValueError):
            ns.spacetime_norm("XYZ", gauss_field(), minkowski, interval=(0, 1))

    def test_rotations_out_of_scope(self, minkowski):
        with pytest.raises(ns.ScopeError):
            ns.higher_order_norm("LE", gauss_field(), minkowski, fields=("Omega_12",), interval=(0, 1))


class TestFields:
    def test_scaling_field_on_static(self, minkowski):
        """S f = t f_t + r f_r = r f_r for a static field on Minkowski."""
        f = gauss_field()
        mesh = ns.ChartMesh.build(minkowski.chart, f.times, f.r)
        s = ns.apply_field(f, "S", mesh)
        np.testing.assert_allclose(s.f(0), (-2 * R * R * np.exp(-R * R))[None].repeat(11, 0), atol=1e-5)

    @settings(max_examples=30, deadline=None)
    @given(x=st.floats(0, 1e4))
    def test_smooth_partition_of_unity(self, x):
        assert ns.DyadicPartition("r", "smooth").sum_weights(np.array([x]))[0] == pytest.approx(1.0, abs=1e-12)

    def test_weighted_linf_oracle(self, minkowski):
        f = gauss_field()
        v = ns.weighted_linf(f, minkowski.chart, (0.0, 1.0))
        T, RR = np.meshgrid(TIMES, R, indexing="ij")
        u = T - RR
        tp = 10 + u + 2 * RR
        w = tp**1.5 * (jap(u) / tp) ** 0.5
        assert v.value == pytest.approx(np.max(w * np.exp(-RR * RR)) / np.sqrt(4 * np.pi), rel=1e-12)

    def test_from_trace(self, minkowski):
        grid = ws.RadialGrid.build(minkowski, t_end=2.0, dr=0.05, data_support=6.0)
        data = ws.cauchy_data(grid, {0: (lambda r: np.exp(-(r - 3) ** 2), None)})
        tr = ws.run(minkowski, data, None, grid, ws.ProbeSpec(snapshot_times=np.linspace(0, 2, 9)))
        fld = ns.field_from_trace(tr, minkowski)
        assert fld.dtt_values is not None
        e = [ns.fixedtime_norm("L2grad", fld, minkowski, t=t).value for t in fld.times]
        assert max(e) / min(e) - 1 < 1e-3
