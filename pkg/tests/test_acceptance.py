"""Acceptance checks at their stated tolerances.

Each test records its clause outcome; the terminal summary prints one
PASS/FAIL line per criterion. Run with ``pytest tests/test_acceptance.py -v``.
"""

import json
import time

import jax.numpy as jnp
import numpy as np
import pytest

from radiant import elliptic_solver as es
from radiant import estimate_harness as eh
from radiant import geodesic_flow as gf
from radiant import metric_models as mm
from radiant import norm_suite as ns
from radiant import pipeline
from radiant import vector_field_calculus as vfc
from radiant import wave_solver as ws

MODELS = ("minkowski", "schwarzschild_tail", "radiating")


def wide_bump(r, R=5.0):
    x = np.clip(np.asarray(r, float) / R, 0.0, 1.0)
    out = np.zeros_like(x)
    inside = x < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    return out


# 1. identity residuals ------------------------------------------------------

@pytest.mark.parametrize("model_id", ["minkowski", "radiating"])
@pytest.mark.parametrize("id", ["stokes_identity", "conf_divergence"])
def test_identity_convergence(id, model_id, acceptance):
    """Residual order in [1.8, 2.2] under two halvings, under five minutes."""
    model = mm.make_model(model_id)
    t0 = time.perf_counter()
    v = eh.check_identity(id, model, refinement_levels=3)
    wall = time.perf_counter() - t0
    ok = 1.8 <= v.order <= 2.2 and wall < 300
    acceptance.record(1, f"{id}/{model_id}", ok, f"order {v.order:.2f}, {wall:.0f}s")
    assert ok


# 2. conservation ------------------------------------------------------------

def test_minkowski_energy_conserved(minkowski, acceptance):
    """Continuum energy from snapshots; the scheme's discrete energy is reported alongside."""
    grid = ws.RadialGrid.build(minkowski, t_end=200.0, r_max=210.0, dr=210.0 / 3999, data_support=5.0)
    assert grid.nr == 4000
    data = ws.cauchy_data(grid, {0: (wide_bump, None)})
    tr = ws.run(minkowski, data, None, grid, ws.ProbeSpec(r_obs=(), snapshot_times=np.arange(0.0, 200.1, 10.0)))
    fld = ns.field_from_trace(tr)
    e = np.array([ns.fixedtime_norm("L2grad", fld, minkowski, t=t, estimate_error=False).value ** 2
                  for t in fld.times])
    drift = float(np.max(np.abs(e - e[0])) / e[0])
    discrete = tr.modes[0].energy
    ok = drift <= 1e-3
    acceptance.record(2, "energy drift", ok, f"{drift:.2e}, discrete {np.ptp(discrete) / discrete[0]:.1e}")
    assert ok


# 3. Hardy constant ----------------------------------------------------------

def test_hardy_constant(minkowski, acceptance):
    t0 = time.perf_counter()
    v = eh.check_ratio("hardy0", minkowski, eh.EnsembleSpec(count=64))
    wall = time.perf_counter() - t0
    per = v.details["per_weight"]
    ens = all(p["ensemble_max"] <= 1.01 * p["printed_constant"] for p in per.values())
    near = all(p["near_fraction"] >= 0.9 for p in per.values())
    fr = ", ".join(f"a={a}: {p['near_fraction']:.3f}" for a, p in per.items())
    acceptance.record(3, "ensemble <= 1.01 bound", ens, f"64 members, {wall:.1f}s")
    acceptance.record(3, "near-optimizer >= 90%", near, fr)
    assert ens and near and v.passed


# 4. geodesics ---------------------------------------------------------------

@pytest.mark.parametrize("model_id", ["schwarzschild_tail", "radiating"])
def test_null_drift(model_id, acceptance):
    model = mm.make_model(model_id)
    worst = 0.0
    for x, k in [((0.0, 7.0, 0.0), (1.0, 0.3, 0.0)), ((4.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
                 ((-8.0, 1.0, 2.0), (1.0, 0.0, 0.0))]:
        p = np.array([0.0, *x])
        xi = gf.null_covector(model, p, np.array(k))[0]
        res = gf.integrate(model, gf.PhasePoint(p, xi), 1000.0, 1e-10, stop_radius=5000.0)
        worst = max(worst, res.max_null_drift)
    ok = worst <= 1e-8
    acceptance.record(4, f"null drift {model_id}", ok, f"{worst:.1e}")
    assert ok


def test_minkowski_exit_and_frequency(minkowski, acceptance):
    worst = 0.0
    rng = np.random.default_rng(1)
    for _ in range(8):
        x = rng.normal(size=3)
        x *= rng.uniform(0.5, 8.0) / np.linalg.norm(x)
        k = rng.normal(size=3)
        k /= np.linalg.norm(k)
        p = np.array([0.0, *x])
        res = gf.integrate(minkowski, gf.PhasePoint(p, gf.null_covector(minkowski, p, k)[0]), 100.0, 1e-10,
                           R0=10.0, stop_radius=20.0)
        b = float(x @ k)
        exact = -b + np.sqrt(b * b - float(x @ x) + 100.0)
        worst = max(worst, abs(res.exit_s - exact))
    ens = gf.nontrapping_constant(minkowski, 10.0, gf.EnsembleSpec(count=64, tol=1e-10))
    ok_exit, ok_a = worst <= 1e-6, ens.A == 1.0
    acceptance.record(4, "Minkowski exit time", ok_exit, f"max error {worst:.1e}")
    acceptance.record(4, "Minkowski A == 1", ok_a, f"A = {ens.A!r}")
    assert ok_exit and ok_a


def test_schwarzschild_nontrapping(schwarzschild, acceptance):
    spec = gf.EnsembleSpec(count=512)
    runs = {R0: gf.nontrapping_constant(schwarzschild, R0, spec) for R0 in (5.0, 10.0, 20.0)}
    exits = all(r.verdict == "non-trapping" for r in runs.values())
    cs = [runs[R0].C for R0 in sorted(runs)]
    mono = all(np.isfinite(cs)) and all(b >= a for a, b in zip(cs, cs[1:]))
    acceptance.record(4, "512 members exit", exits, f"C(10) = {runs[10.0].C:.3f}")
    acceptance.record(4, "C finite and monotone", mono, ", ".join(f"{c:.2f}" for c in cs))
    assert exits and mono


# 5. assumption checker ------------------------------------------------------

def test_assumptions_minkowski_and_delta_one(minkowski, schwarzschild, acceptance):
    flat = mm.check_assumptions(minkowski)
    zero = flat.passed and max(r["max_ratio"] for r in flat.rows) == 0.0 and flat.det_ratio == 0.0
    sch = mm.check_assumptions(schwarzschild, sample_spec=mm.SampleSpec(delta=1.0))
    acceptance.record(5, "Minkowski ratios 0", zero)
    acceptance.record(5, "schwarzschild_tail passes delta=1", sch.passed)
    assert zero and sch.passed


@pytest.mark.xfail(strict=True, reason="r^-1 tails also obey the delta'=0.9 bounds; see notes/decisions.md")
def test_assumptions_fail_below_delta(schwarzschild, acceptance):
    rep = mm.check_assumptions(schwarzschild, sample_spec=mm.SampleSpec(delta=0.9))
    acceptance.record(5, "delta'=0.9 fails", not rep.passed, "checker passes: the clause is unattainable")
    assert not rep.passed


# 6. timelike margin ---------------------------------------------------------

@pytest.mark.parametrize("model_id", MODELS)
def test_timelike_margin(model_id, acceptance):
    res = gf.timelike_margin(mm.make_model(model_id), gf.TimelikeSpec(t_range=(1.0, 1e3), r_max=100.0))
    acceptance.record(6, model_id, res.margin > 0, f"min -g00 = {res.margin:.3g}")
    assert res.margin > 0


# 7, 8. long schwarzschild_tail run ------------------------------------------

@pytest.fixture(scope="module")
def long_run(schwarzschild):
    grid = ws.RadialGrid.build(schwarzschild, t_end=1000.0, dr=0.0625, data_support=5.0)
    data = ws.cauchy_data(grid, {0: (wide_bump, None)})
    snaps = np.unique(np.concatenate([[0.0, 1.0], np.arange(0.0, 1000.1, 10.0)]))
    probes = ws.ProbeSpec(r_obs=(2.0,), u0=(-3.0,), snapshot_times=snaps, record_every=4)
    return ws.run(schwarzschild, data, None, grid, probes)


def test_decay_exponents(long_run, acceptance):
    assert 15000 <= long_run.grid.nr <= 17000
    inner = eh.decay_fit(long_run, "interior", (100.0, 1000.0))
    cone = eh.decay_fit(long_run, "cone", (100.0, 1000.0))
    ok_i = inner.exponent <= -1.5 + 0.1
    ok_c = cone.r_phi_slope >= -0.1
    acceptance.record(7, "interior exponent <= -1.4", ok_i, f"{inner.exponent:.2f}, nr {long_run.grid.nr}")
    acceptance.record(7, "r phi slope along u >= -0.1", ok_c, f"{cone.r_phi_slope:.3f}")
    assert ok_i and ok_c


def test_conformal_energy_bounded(long_run, schwarzschild, acceptance):
    fld = ns.field_from_trace(long_run, schwarzschild)
    ce = np.array([ns.fixedtime_norm("CE", fld, schwarzschild, t=t, estimate_error=False).value
                   for t in fld.times])
    k1 = int(np.flatnonzero(fld.times == 1.0)[0])
    growth = float(ce.max() / ce[k1])
    ok = growth <= 10
    acceptance.record(8, "sup CE(t)/CE(1) <= 10", ok, f"{growth:.2f}")
    assert ok


# 9. elliptic ----------------------------------------------------------------

def test_elliptic(schwarzschild, acceptance):
    r = es.radial_grid(60.0, 0.02)
    F = es.gaussian_source(r, 0)
    flat = es.neumann_solve(es.RadialEllipticProblem(0, r, np.ones_like(r), np.ones_like(r), F), 3)
    one_term = flat.residuals[1] <= 1e-10 * flat.residuals[0]
    curved = es.neumann_solve(es.model_problem(schwarzschild, 100.0, 0, r, F=F), 10)
    geometric = curved.verdict == "converged" and max(curved.ratios) <= 0.9
    ratios = {a: es.weighted_elliptic_ratio(schwarzschild, a)["max_ratio"] for a in (-0.25, 0.5, 1.25)}
    finite = all(np.isfinite(v) for v in ratios.values())
    growth = es.tail_scale_sweep(2.5)["growth"]
    acceptance.record(9, "flat one-term exact", one_term, f"{flat.residuals[1] / flat.residuals[0]:.1e}")
    acceptance.record(9, "geometric decay", geometric, f"max ratio {max(curved.ratios):.3f}")
    acceptance.record(9, "weighted ratio finite", finite, ", ".join(f"{v:.2f}" for v in ratios.values()))
    acceptance.record(9, "tail sweep growth >= 10", growth >= 10, f"{growth:.0f}x")
    assert one_term and geometric and finite and growth >= 10


# 10. flat commutator --------------------------------------------------------

def test_flat_scaling_commutator(minkowski, acceptance, rng):
    cubics = [
        lambda x: x[0] ** 3 - 3 * x[0] * x[1] ** 2 + x[2] * x[3] * x[1],
        lambda x: x[0] ** 2 * x[3] + 2 * x[1] ** 3 - x[0] * x[2] + 4.0,
        lambda x: jnp.sum(x[1:] ** 2) * x[0] - x[3] ** 3 + x[1] * x[2],
    ]
    d = rng.normal(size=(32, 3))
    pts = np.column_stack([rng.uniform(0.5, 20, 32), d * rng.uniform(0.5, 15, 32)[:, None]])
    worst = 0.0
    for phi in cubics:
        c = vfc.commutator_apply(minkowski, vfc.vector_field("S"), phi, pts)
        worst = max(worst, np.max(np.abs(c.direct - 2 * c.box)), np.max(np.abs(c.formula - 2 * c.box)))
    ok = worst <= 1e-10
    acceptance.record(10, "[box, S] = 2 box, both paths", ok, f"{worst:.1e}")
    assert ok


# 11. determinism ------------------------------------------------------------

def test_pipeline_determinism(tmp_path, acceptance):
    cfg = {"model": {"id": "schwarzschild_tail"}, "seed": 42}
    runs = [pipeline.run_pipeline(cfg, out=tmp_path / name) for name in ("a", "b")]
    sums = [{f["path"]: f["sha256"] for f in m.files if f["path"].endswith(".csv")} for m in runs]
    same = bool(sums[0]) and sums[0] == sums[1] and runs[0].status == runs[1].status
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    acceptance.record(11, "CSV checksums identical", same, f"{len(sums[0])} CSV files")
    assert same and "decay" in report and "geodesics" in report
