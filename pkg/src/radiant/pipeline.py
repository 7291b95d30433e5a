"""Stage runner: check-metric, geodesics, solve, norms, verify, decay, report.

Every stage reads the resolved config, writes JSON and CSV files into the
output directory and returns a summary dict. The manifest inventories every
file with its checksum; CSV contents depend only on the config.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import elliptic_solver as es
from . import estimate_harness as eh
from . import geodesic_flow as gf
from . import metric_models as mm
from . import norm_suite as ns
from . import wave_solver as ws
from .config import STAGES, config_hash, resolve


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage, self.cause = stage, cause


@dataclass
class RunManifest:
    config_hash: str
    version: str
    status: str = "ok"  # ok | assertion failure | aborted
    stages: dict = field(default_factory=dict)  # name -> {"status", "wall_time"}
    files: list = field(default_factory=list)  # {"path", "sha256", "bytes"}
    verdicts: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    error: str | None = None

    @property
    def exit_code(self) -> int:
        return {"ok": 0, "assertion failure": 1, "aborted": 3}[self.status]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exit_code"] = self.exit_code
        return eh._jsonable(d)


# ---------------------------------------------------------------------------
# helpers

def build_model(cfg: dict) -> mm.MetricModel:
    m, ch = cfg["model"], cfg["chart"]
    profile = mm.AsymptoticProfile(m["delta"], m["gamma"], m["C_tau"], m["amplitude"])
    blend = mm.BlendSpec(ch["blend_lo"], ch["blend_hi"]) if ch["blend"] else None
    table = mm.load_table(m["table"]) if m["table"] else None
    return mm.make_model(m["id"], profile, mass=m["mass"], core=tuple(m["core"]), blend=blend, table=table)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(eh._jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def inventory(out: Path) -> list[dict]:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    return [{"path": p.relative_to(out).as_posix(), "sha256": sha256(p), "bytes": p.stat().st_size} for p in files]


class Context:
    """Shared state of one pipeline run (single writer of the output directory)."""

    def __init__(self, cfg: dict, out: Path, jobs: int):
        self.cfg, self.out, self.jobs = cfg, out, jobs
        self.model = build_model(cfg)
        self._trace = None
        self.failures: list[str] = []
        self.verdicts: list[dict] = []

    @property
    def trace(self) -> ws.SolutionTrace:
        if self._trace is None:
            d = self.out / "solve"
            if (d / "trace.json").exists():
                self._trace = ws.SolutionTrace.load(d)
            else:
                stage_solve(self)
        return self._trace


# ---------------------------------------------------------------------------
# stages

def stage_check_metric(ctx: Context) -> dict:
    rep = mm.check_assumptions(ctx.model)
    margin = gf.timelike_margin(ctx.model)
    rows = [(r["class"], r["k"], r["|J|"], r["max_ratio"]) for r in rep.table()]
    write_csv(ctx.out / "assumptions.csv", ["class", "k", "J", "max_ratio"], rows)
    res = {"model": ctx.model.id, "delta": rep.delta, "gamma": rep.gamma, "passed": rep.passed,
           "failures": rep.failures, "grad_u_ratio": rep.grad_u_ratio, "det_ratio": rep.det_ratio,
           "ellipticity": rep.ellipticity, "estimated_delta": rep.estimated_delta,
           "timelike_margin": margin.margin, "timelike_point": margin.point, "timelike_passed": margin.passed}
    write_json(ctx.out / "check_metric.json", res)
    if not rep.passed:
        ctx.failures.append(f"check-metric: symbol bounds fail ({'; '.join(rep.failures)})")
    if not margin.passed:
        ctx.failures.append("check-metric: -g_00 not positive on the sampled region")
    return {"passed": rep.passed and margin.passed, "timelike_margin": margin.margin}


def stage_geodesics(ctx: Context) -> dict:
    g = ctx.cfg["geodesics"]
    rows, out = [], []
    for R0 in sorted(g["R0"]):
        res = gf.nontrapping_constant(ctx.model, R0, gf.EnsembleSpec(count=g["count"], seed=ctx.cfg["seed"],
                                                                     tol=g["tol"]))
        rows.append((R0, res.C, res.A, res.verdict, len(res.exit_s), len(res.failures)))
        out.append({"R0": R0, **res.summary()})
    write_csv(ctx.out / "geodesics.csv", ["R0", "C", "A", "verdict", "count", "failures"], rows)
    Cs = [r[1] for r in rows]
    monotone = all(b >= a for a, b in zip(Cs, Cs[1:]))
    finite = all(math.isfinite(c) for c in Cs)
    write_json(ctx.out / "geodesics.json", {"runs": out, "monotone_in_R0": monotone})
    if not finite:
        ctx.failures.append("geodesics: possibly trapped rays")
    elif not monotone:
        ctx.failures.append("geodesics: C(R0, g) not monotone in R0")
    return {"C": {f"{r[0]:g}": r[1] for r in rows}, "A": max(r[2] for r in rows) if rows else None,
            "monotone_in_R0": monotone}


def initial_profiles(cfg: dict) -> tuple[dict, float]:
    d = cfg["solver"]["data"]
    c, w = d["center"], d["width"]
    profiles = {}
    for l in cfg["solver"]["modes"]:
        profiles[l] = (lambda r, l=l: eh.shell_profile(r, l, d["amplitude"], c, w),
                       lambda r, l=l: eh.shell_profile(r, l, d["amplitude_t"], c, w))
    return profiles, math.sqrt(c * c + 2 * c * w)


def snapshot_times(cfg: dict) -> np.ndarray:
    s = cfg["solver"]
    base = np.arange(0.0, s["t_end"] + 1e-9, cfg["probe"]["snapshot_dt"])
    t_ref = cfg["norms"]["t_ref"]
    extra = [t_ref] if 0 <= t_ref <= s["t_end"] else []
    return np.unique(np.round(np.concatenate([base, extra, [s["t_end"]]]), 12))


def stage_solve(ctx: Context) -> dict:
    s, p = ctx.cfg["solver"], ctx.cfg["probe"]
    profiles, support = initial_profiles(ctx.cfg)
    grid = ws.RadialGrid.build(ctx.model, t_end=s["t_end"], dr=s["dr"], cfl=s["cfl"], data_support=support)
    data = ws.cauchy_data(grid, profiles)
    probes = ws.ProbeSpec(tuple(p["r_obs"]), tuple(p["u0"]), tuple(snapshot_times(ctx.cfg)), p["record_every"])
    trace = ws.run(ctx.model, data, None, grid, probes, jobs=ctx.jobs)
    trace.save(ctx.out / "solve")
    ctx._trace = trace
    res = {"nr": grid.nr, "dt": grid.dt, "r_max": grid.r_max, "steps": grid.n_steps, "modes": s["modes"],
           "data_norm": data.h_norm()}
    write_json(ctx.out / "solve.json", res)
    return res


def stage_norms(ctx: Context) -> dict:
    tr, model, cfg = ctx.trace, ctx.model, ctx.cfg["norms"]
    fld = ns.field_from_trace(tr, model)
    times = fld.times
    rows = []
    for t in times:
        rows.append([t] + [ns.fixedtime_norm(k, fld, model, None, t, estimate_error=False).value
                           for k in cfg["fixed_kinds"]])
    write_csv(ctx.out / "fixed_norms.csv", ["t"] + list(cfg["fixed_kinds"]), rows)
    interval = (float(times[0]), float(times[-1]))
    st_rows = []
    for kind in cfg["kinds"]:
        v = ns.spacetime_norm(kind, fld, model, None, interval)
        st_rows.append((kind, interval[0], interval[1], v.value, v.err_est))
    write_csv(ctx.out / "spacetime_norms.csv", ["kind", "t0", "t1", "value", "err_est"], st_rows)
    res = {"spacetime": {r[0]: r[3] for r in st_rows}}
    if "CE" in cfg["fixed_kinds"]:
        ce = np.array([r[1 + list(cfg["fixed_kinds"]).index("CE")] for r in rows])
        k = int(np.argmin(np.abs(times - cfg["t_ref"])))
        res["ce_growth"] = float(ce[k:].max() / ce[k]) if ce[k] > 0 else float("nan")
        res["t_ref"] = float(times[k])
    write_json(ctx.out / "norms.json", res)
    return res


def stage_verify(ctx: Context) -> dict:
    r = ctx.cfg["registry"]
    spec = eh.EnsembleSpec(count=r["count"], seed=ctx.cfg["seed"], jobs=ctx.jobs)
    ids = r["ids"]
    kw = {i: {"refinement_levels": r["refinement_levels"]} for i in eh.IDENTITY_IDS}
    verdicts = eh.run_registry(ids, ctx.model, spec, jobs=ctx.jobs, identity_kw=kw)
    vd = [v.to_dict() for v in verdicts]
    write_json(ctx.out / "verdicts.json", vd)
    write_csv(ctx.out / "constants.csv", ["id", "mode", "model", "value", "order", "ensemble_size", "threshold",
                                          "passed"],
              [(v.id, v.mode, v.model, v.value, v.order, v.ensemble_size, v.threshold, v.passed)
               for v in verdicts])
    ctx.verdicts = vd
    for v in verdicts:
        if not v.passed:
            ctx.failures.append(f"verify: {v.id} failed ({v.threshold})")
    return {"count": len(vd), "passed": sum(v.passed for v in verdicts)}


def decay_window(cfg: dict) -> tuple[float, float]:
    w = cfg["decay"]["window"]
    t_end = cfg["solver"]["t_end"]
    return (float(w[0]), float(w[1])) if w is not None else (max(1.0, t_end / 10.0), float(t_end))


def stage_decay(ctx: Context) -> dict:
    tr, cfg = ctx.trace, ctx.cfg
    window = decay_window(cfg)
    rows, fits = [], []
    for l in sorted(tr.modes):
        for channel in cfg["decay"]["channels"]:
            n = len(tr.probes.r_obs) if channel == "interior" else len(tr.probes.u0)
            for k in range(n):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    f = eh.decay_fit(tr, channel, window, l=l, probe=k, floor=cfg["decay"]["floor"],
                                     tol=cfg["decay"]["tol"])
                where = tr.probes.r_obs[k] if channel == "interior" else tr.probes.u0[k]
                rows.append((l, channel, where, f.window[0], f.window[1], f.exponent, f.stderr, f.residual,
                             f.n_points, f.verdict, f.r_phi_slope))
                fits.append({"l": l, "probe": where, **f.to_dict()})
    write_csv(ctx.out / "decay.csv", ["l", "channel", "probe", "t_a", "t_b", "exponent", "stderr", "residual",
                                      "n_points", "verdict", "r_phi_slope"], rows)
    write_json(ctx.out / "decay.json", fits)
    return {"fits": [{"l": r[0], "channel": r[1], "probe": r[2], "exponent": r[5], "verdict": r[9],
                      "r_phi_slope": r[10]} for r in rows]}


def run_elliptic(cfg: dict, out: Path) -> dict:
    e = cfg["elliptic"]
    model = build_model(cfg)
    spec = es.EnsembleSpec(count=e["count"], seed=cfg["seed"])
    r = es.radial_grid(spec.r_max, spec.h)
    neu = es.neumann_solve(es.model_problem(model, 100.0, 0, r, F=es.gaussian_source(r, 0)), e["k_terms"])
    rows = [("neumann", model.id, "", max(neu.ratios) if neu.ratios else 0.0, neu.verdict)]
    for a in e["a"]:
        w = es.weighted_elliptic_ratio(model, a, spec)
        rows.append(("weighted_ratio", model.id, a, w["max_ratio"], "finite" if math.isfinite(w["max_ratio"])
                     else "infinite"))
    sweep = es.tail_scale_sweep(e["sweep_a"], model=model)
    rows.append(("tail_sweep_growth", model.id, e["sweep_a"], sweep["growth"], ""))
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "elliptic.csv", ["check", "model", "a", "value", "verdict"], rows)
    res = {"neumann": {"residuals": neu.residuals, "ratios": neu.ratios, "verdict": neu.verdict},
           "weighted": {f"{r[2]:g}": r[3] for r in rows if r[0] == "weighted_ratio"}, "sweep": sweep}
    write_json(out / "elliptic.json", res)
    return res


_SUMMARY_FILES = {"check-metric": "check_metric.json", "geodesics": "geodesics.json", "solve": "solve.json",
                  "norms": "norms.json", "verify": "verdicts.json", "decay": "decay.json"}


def build_report(out: Path) -> dict:
    """Collect stage outputs present in ``out`` into report.json and summary.txt."""
    report = {}
    for stage, name in _SUMMARY_FILES.items():
        p = out / name
        if p.exists():
            report[stage] = json.loads(p.read_text())
    if (out / "elliptic.json").exists():
        report["elliptic"] = json.loads((out / "elliptic.json").read_text())
    write_json(out / "report.json", report)
    lines = [f"{'item':<34} {'value':>16}  status"]

    def line(name, value, status=""):
        v = f"{value:.6g}" if isinstance(value, (int, float)) and value is not None else str(value)
        lines.append(f"{name:<34} {v:>16}  {status}")

    if "check-metric" in report:
        c = report["check-metric"]
        line("assumptions", c["delta"], "pass" if c["passed"] else "FAIL")
        line("timelike margin", c["timelike_margin"], "pass" if c["timelike_passed"] else "FAIL")
    for run in report.get("geodesics", {}).get("runs", []):
        line(f"C(R0={run['R0']:g})", run["C"], run["verdict"])
    for k, v in report.get("norms", {}).get("spacetime", {}).items():
        line(f"norm {k}", v)
    if "ce_growth" in report.get("norms", {}):
        line("sup CE(t)/CE(t_ref)", report["norms"]["ce_growth"])
    for v in report.get("verify", []):
        line(v["id"], v["value"], "pass" if v["passed"] else "FAIL")
    for f in report.get("decay", []):
        line(f"decay {f['channel']} l={f['l']} @{f['probe']:g}", f["exponent"], f["verdict"])
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return report


def stage_report(ctx: Context) -> dict:
    build_report(ctx.out)
    return {"files": ["report.json", "summary.txt"]}


STAGE_FUNCS = {"check-metric": stage_check_metric, "geodesics": stage_geodesics, "solve": stage_solve,
               "norms": stage_norms, "verify": stage_verify, "decay": stage_decay, "report": stage_report}


def run_pipeline(config: dict, *, stages=None, out=None, jobs=None) -> RunManifest:
    """Run the enabled stages in order; a failing stage halts the run with partial outputs kept."""
    cfg = resolve(config)
    out = Path(out if out is not None else cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    jobs = int(jobs if jobs is not None else cfg["jobs"])
    write_json(out / "resolved_config.json", cfg)
    manifest = RunManifest(config_hash(cfg), __version__)
    selected = [s for s in STAGES if (stages is None and cfg["stages"][s]) or (stages is not None and s in stages)]
    try:
        ctx = Context(cfg, out, jobs)
        for name in STAGES:
            if name not in selected:
                manifest.stages[name] = {"status": "skipped", "wall_time": 0.0}
                continue
            t0 = time.perf_counter()
            try:
                manifest.results[name] = STAGE_FUNCS[name](ctx)
            except Exception as exc:
                manifest.stages[name] = {"status": "failed", "wall_time": time.perf_counter() - t0}
                raise StageError(name, exc) from exc
            manifest.stages[name] = {"status": "ok", "wall_time": time.perf_counter() - t0}
        manifest.verdicts = ctx.verdicts
        manifest.failures = ctx.failures
        manifest.status = "assertion failure" if ctx.failures else "ok"
    except StageError as exc:
        manifest.status, manifest.error = "aborted", str(exc)
        for name in STAGES:
            manifest.stages.setdefault(name, {"status": "not run", "wall_time": 0.0})
    finally:
        manifest.files = inventory(out)
        write_json(out / "manifest.json", manifest.to_dict())
    return manifest
