from dataclasses import replace

import numpy as np
import pytest

from radiant import wave_solver as ws


def bump(r):
    return np.exp(-((r - 5.0) ** 2))


def dalembert_phi(t, r):
    """phi = psi / r with psi the odd extension of r bump(r) moved by d'Alembert's formula."""
    G = lambda s: s * np.exp(-((np.abs(s) - 5.0) ** 2))
    return 0.5 * (G(r - t) + G(r + t)) / r


@pytest.fixture(scope="module")
def flat_run(minkowski):
    grid = ws.RadialGrid.build(minkowski, t_end=8.0, dr=0.025, data_support=9.0)
    data = ws.cauchy_data(grid, {0: (bump, None)})
    probes = ws.ProbeSpec(r_obs=(2.0, 6.0), u0=(0.0,), snapshot_times=(0.0, 2.5, 8.0))
    return grid, ws.run(minkowski, data, None, grid, probes)


class TestGrid:
    def test_causal_size(self, minkowski):
        g = ws.RadialGrid.build(minkowski, t_end=10.0, dr=0.1, data_support=4.0)
        assert g.r_max >= 4.0 + 10.0 + 5.0
        assert g.dt <= 0.5 * g.dr * (1 + 1e-12)

    def test_too_small(self, minkowski):
        with pytest.raises(ws.GridError):
            ws.RadialGrid.build(minkowski, t_end=10.0, dr=0.1, r_max=8.0)

    def test_cfl_violation(self, minkowski):
        g = ws.RadialGrid.build(minkowski, t_end=1.0, dr=0.1)
        with pytest.raises(ws.GridError):
            replace(g, dt=g.dr).check_cfl()

    def test_data_on_wrong_grid(self, minkowski):
        g = ws.RadialGrid.build(minkowski, t_end=1.0, dr=0.1)
        other = ws.RadialGrid.build(minkowski, t_end=1.0, dr=0.05)
        with pytest.raises(ws.GridError):
            ws.run(minkowski, ws.cauchy_data(other, {0: (bump, None)}), None, g)


class TestFlatSolution:
    def test_matches_dalembert(self, flat_run):
        grid, tr = flat_run
        m = tr.modes[0]
        exact = dalembert_phi(m.times[:, None], np.array([2.0, 6.0])[None])
        assert np.max(np.abs(m.interior[:, :, 0] - exact)) < 2e-3

    def test_snapshot_profile(self, flat_run):
        grid, tr = flat_run
        phi, _, _ = tr.phi_snapshots(0)
        r = grid.r[1:]
        np.testing.assert_allclose(phi[1, 1:], dalembert_phi(2.5, r), atol=2e-3)

    def test_energy_conserved(self, flat_run):
        e = flat_run[1].modes[0].energy
        assert np.max(np.abs(e - e[0])) / e[0] < 1e-3

    def test_cone_probe_follows_u(self, flat_run):
        m = flat_run[1].modes[0]
        ok = np.isfinite(m.cone[:, 0, 0])
        np.testing.assert_allclose(m.cone[ok, 0, 0], m.times[ok], atol=1e-9)

    def test_second_order(self, minkowski):
        res = ws.self_convergence(minkowski, (bump, None), t_end=4.0, dr=0.1, r_obs=2.0)
        assert 1.8 <= res["order"] <= 2.2


class TestCurved:
    def test_schwarzschild_stays_bounded(self, schwarzschild):
        grid = ws.RadialGrid.build(schwarzschild, t_end=20.0, dr=0.05, data_support=9.0)
        tr = ws.run(schwarzschild, ws.cauchy_data(grid, {0: (bump, None), 1: (bump, None)}), None, grid,
                    ws.ProbeSpec(r_obs=(3.0,)))
        for l in (0, 1):
            assert np.all(np.isfinite(tr.modes[l].interior))
            assert np.max(np.abs(tr.modes[l].interior[:, 0, 0])) < 2.0

    def test_threads_do_not_change_results(self, radiating):
        grid = ws.RadialGrid.build(radiating, t_end=3.0, dr=0.1, data_support=9.0)
        data = ws.cauchy_data(grid, {0: (bump, None), 1: (None, bump)})
        a = ws.run(radiating, data, None, grid, ws.ProbeSpec(r_obs=(2.0,)))
        b = ws.run(radiating, data, None, grid, ws.ProbeSpec(r_obs=(2.0,)), jobs=2)
        for l in (0, 1):
            np.testing.assert_array_equal(a.modes[l].interior, b.modes[l].interior)

    def test_source_drives_solution(self, minkowski):
        grid = ws.RadialGrid.build(minkowski, t_end=2.0, dr=0.1, data_support=6.0)
        data = ws.cauchy_data(grid, {0: (None, None)})
        tr = ws.run(minkowski, data, {0: lambda t, r: np.exp(-((r - 2.0) ** 2))}, grid,
                    ws.ProbeSpec(r_obs=(2.0,)))
        assert np.max(np.abs(tr.modes[0].interior[:, 0, 0])) > 0.1

    def test_psi_coefficients_are_flat_for_minkowski(self, minkowski):
        c = ws.psi_equation_coeffs(minkowski, 0, np.zeros(3), np.array([1.0, 2.0, 3.0]))
        assert all(np.all(np.isfinite(np.asarray(v))) for v in c)


class TestErrors:
    def test_nonfinite_data(self, minkowski):
        grid = ws.RadialGrid.build(minkowski, t_end=1.0, dr=0.1)
        data = ws.cauchy_data(grid, {0: (lambda r: np.full_like(r, np.nan), None)})
        with pytest.raises(ws.SolverError):
            ws.run(minkowski, data, None, grid)

    def test_snapshot_outside_run(self, minkowski):
        grid = ws.RadialGrid.build(minkowski, t_end=1.0, dr=0.1)
        with pytest.raises(ws.GridError):
            ws.run(minkowski, ws.cauchy_data(grid, {0: (bump, None)}), None, grid,
                   ws.ProbeSpec(snapshot_times=(2.0,)))


class TestPersistence:
    def test_roundtrip(self, flat_run, tmp_path):
        _, tr = flat_run
        tr.save(tmp_path)
        back = ws.SolutionTrace.load(tmp_path)
        np.testing.assert_array_equal(back.modes[0].interior, tr.modes[0].interior)
        np.testing.assert_array_equal(back.snap_times, tr.snap_times)
        assert back.grid == tr.grid

    def test_data_norm_scales(self, minkowski):
        grid = ws.RadialGrid.build(minkowski, t_end=1.0, dr=0.05, data_support=9.0)
        a = ws.cauchy_data(grid, {0: (bump, None)}).h_norm()
        b = ws.cauchy_data(grid, {0: (lambda r: 3 * bump(r), None)}).h_norm()
        assert b == pytest.approx(3 * a, rel=1e-12)
