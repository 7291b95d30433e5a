import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radiant import estimate_harness as eh
from radiant import wave_solver as ws

SMALL = eh.EnsembleSpec(count=4)


def synthetic_trace(times, interior, cone_r=None, cone_phi=None):
    n = times.size
    cone = np.full((n, 1, 2), np.nan)
    if cone_r is not None:
        cone[:, 0, 0], cone[:, 0, 1] = cone_r, cone_phi
    inter = np.zeros((n, 1, 3))
    inter[:, 0, 0] = interior
    mt = ws.ModeTrace(0, times, inter, cone, np.ones(n), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
    grid = ws.RadialGrid(r_max=2.0, nr=3, dt=float(times[1] - times[0]), t0=float(times[0]),
                         t_end=float(times[-1]))
    return ws.SolutionTrace("synthetic", grid, ws.ProbeSpec((1.0,), (0.0,)), {0: mt})


class TestRegistry:
    def test_entries(self):
        assert len(eh.REGISTRY) == 19
        assert set(eh.IDENTITY_IDS) == {"stokes_identity", "conf_divergence"}
        assert set(eh.IDENTITY_IDS) | set(eh.RATIO_IDS) == set(eh.REGISTRY)

    def test_unknown_entry(self, minkowski):
        with pytest.raises(ValueError):
            eh.run_registry(["nope"], minkowski)

    def test_mode_checks(self, minkowski):
        with pytest.raises(ValueError):
            eh.check_ratio("stokes_identity", minkowski)
        with pytest.raises(ValueError):
            eh.check_identity("hardy0", minkowski)
        with pytest.raises(ValueError):
            eh.check_identity("stokes_identity", minkowski, refinement_levels=2)

    @pytest.mark.parametrize("name", ["dt", "T", "S", "K0", "Kmink", "Y2", "X3"])
    def test_multipliers(self, name):
        assert isinstance(eh.multiplier(name), eh.vfc.VectorFieldSpec)

    def test_sorted_and_parallel(self, minkowski):
        ids = ["conjlemma", "boundary2", "hardy_int"]
        a = eh.run_registry(ids, minkowski, SMALL)
        b = eh.run_registry(ids, minkowski, SMALL, jobs=2)
        assert [v.id for v in a] == sorted(ids)
        assert [v.value for v in a] == [v.value for v in b]

    def test_verdict_json(self, minkowski):
        v = eh.check_ratio("conjlemma", minkowski, SMALL)
        json.dumps(v.to_dict())


class TestHardy:
    def test_single_verdict(self, minkowski):
        v = eh.check_ratio("hardy0", minkowski, eh.EnsembleSpec(count=16))
        assert v.passed and v.value <= 1.01
        assert set(v.details["per_weight"]) == {"0", "0.5", "1"}

    @pytest.mark.parametrize("a", [0.0, 0.5, 1.0])
    def test_near_optimizer_closed_form(self, a):
        """ratio/bound = (1 + 1/(2 k^2 sigma^2))^{-1/2} with k = a + 1/2 for the log-Gaussian profile."""
        lhs, rhs = eh.hardy_functionals(eh.hardy_near_optimizer(a), a)
        k = a + 0.5
        assert (lhs / rhs) / (2 / (2 * a + 1)) == pytest.approx((1 + 1 / (2 * k * k * 25)) ** -0.5, rel=1e-5)

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(-0.4, 2.0), c=st.floats(0, 10), w=st.floats(0.3, 3), amp=st.floats(0.1, 10))
    def test_bound_holds(self, a, c, w, amp):
        r = np.exp(eh._HARDY_S)
        lhs, rhs = eh.hardy_functionals(amp * np.exp(-((r - c) / w) ** 2), a)
        assert lhs <= 2 / (2 * a + 1) * rhs * (1 + 1e-6)

    def test_weight_out_of_range(self, minkowski):
        with pytest.raises(ValueError):
            eh.check_ratio("hardy0", minkowski, eh.EnsembleSpec(a=-0.5, count=2))


class TestIdentity:
    def test_stokes_minkowski(self, minkowski):
        v = eh.check_identity("stokes_identity", minkowski, X="dt")
        assert v.passed and 1.8 <= v.order <= 2.2
        assert len(v.residuals) == 3

    def test_needs_levels(self, minkowski):
        with pytest.raises(eh.HarnessError):
            eh.check_identity("stokes_identity", minkowski, field_source=[object()])


class TestRatios:
    @pytest.mark.parametrize("id", ["boundary1", "boundary2"])
    def test_boundary_positive(self, id, minkowski):
        v = eh.check_ratio(id, minkowski, SMALL)
        assert v.passed

    @pytest.mark.parametrize("id", ["hardy_int", "conjlemma", "ave_scaling", "LS1", "conf_energy_est"])
    def test_finite(self, id, minkowski):
        v = eh.check_ratio(id, minkowski, SMALL)
        assert v.passed and np.isfinite(v.value) and v.ensemble_size == 4

    def test_seed_determinism(self, minkowski):
        a = eh.check_ratio("hardy_int", minkowski, eh.EnsembleSpec(count=4, seed=3))
        b = eh.check_ratio("hardy_int", minkowski, eh.EnsembleSpec(count=4, seed=3))
        assert a.value == b.value


class TestDecayFit:
    def test_power_law(self):
        t = np.linspace(1.0, 1000.0, 20000)
        fit = eh.decay_fit(synthetic_trace(t, t**-1.5), "interior", (100.0, 1000.0))
        assert fit.exponent == pytest.approx(-1.5, abs=1e-3)
        assert fit.verdict == "pass"

    def test_slow_decay_fails(self):
        t = np.linspace(1.0, 1000.0, 20000)
        fit = eh.decay_fit(synthetic_trace(t, t**-0.5), "interior", (100.0, 1000.0))
        assert fit.verdict == "fail"

    def test_cone_channel(self):
        t = np.linspace(1.0, 1000.0, 20000)
        fit = eh.decay_fit(synthetic_trace(t, 0 * t, cone_r=t, cone_phi=1.0 / t), "cone", (100.0, 1000.0))
        assert fit.exponent == pytest.approx(-1.0, abs=1e-3)
        assert fit.r_phi_slope == pytest.approx(0.0, abs=1e-3)

    def test_exact_vanishing(self):
        t = np.linspace(1.0, 1000.0, 2000)
        y = np.where(t < 10, 1.0, 0.0)
        assert eh.decay_fit(synthetic_trace(t, y), "interior").verdict == "exact vanishing"

    def test_noise_floor_truncates(self):
        t = np.linspace(1.0, 1000.0, 20000)
        y = np.maximum(t**-3.0, 1e-8)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = eh.decay_fit(synthetic_trace(t, y), "interior", (10.0, 1000.0))
        assert any("noise floor" in w for w in fit.warnings)
        assert fit.exponent == pytest.approx(-3.0, abs=0.05)

    def test_window_checks(self):
        t = np.linspace(1.0, 100.0, 200)
        tr = synthetic_trace(t, t**-1.0)
        with pytest.raises(ValueError):
            eh.decay_fit(tr, "interior", (10.0, 1000.0))
        with pytest.raises(ValueError):
            eh.decay_fit(tr, "interior", (50.0, 10.0))
        with pytest.raises(ValueError):
            eh.decay_fit(tr, "sideways", (10.0, 100.0))
