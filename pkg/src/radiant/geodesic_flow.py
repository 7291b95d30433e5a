"""Null geodesics as a Hamiltonian flow, the non-trapping constant, and the timelike margin."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from .metric_models import MetricModel, sphere_points

NEVER_WITHIN = "never-within-horizon"


class StiffRegionError(RuntimeError):
    """Adaptive step size underflowed."""


class TrappingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray
    s: float = 0.0


@dataclass(frozen=True)
class FlowResult:
    trajectory: np.ndarray  # rows: s, x0..x3, xi0..xi3, p
    exit_s: float | str
    max_null_drift: float
    freq_ratio: tuple[float, float]  # (max, min) of |xi(s)|/|xi(0)|
    truncated: bool = False

    @property
    def points(self) -> list[PhasePoint]:
        return [PhasePoint(row[1:5].copy(), row[5:9].copy(), float(row[0])) for row in self.trajectory]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "t", "x", "y", "z", "xi0", "xi1", "xi2", "xi3", "p"])
        for row in self.trajectory:
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Hamiltonian

def _rhs_single(model: MetricModel):
    def ham(x, xi):
        return xi @ model.inv_fn(x) @ xi

    def rhs(y):
        x, xi = y[:4], y[4:]
        dx = 2.0 * model.inv_fn(x) @ xi
        dxi = -jax.grad(ham, argnums=0)(x, xi)
        return jnp.concatenate([dx, dxi])

    return rhs, ham


@lru_cache(maxsize=32)
def _compiled(model: MetricModel):
    rhs, ham = _rhs_single(model)
    return jax.jit(jax.vmap(rhs)), jax.jit(jax.vmap(ham))


def hamilton_rhs(model: MetricModel, phase: PhasePoint) -> tuple[np.ndarray, np.ndarray]:
    """dx/ds = 2 g xi, dxi/ds = -(d_x g) xi xi."""
    rhs, _ = _compiled(model)
    y = np.concatenate([np.asarray(phase.x, float), np.asarray(phase.xi, float)])[None]
    out = np.asarray(rhs(y))[0]
    return out[:4], out[4:]


def principal_symbol(model: MetricModel, x, xi) -> np.ndarray:
    _, ham = _compiled(model)
    x = np.atleast_2d(np.asarray(x, float))
    xi = np.atleast_2d(np.asarray(xi, float))
    return np.asarray(ham(x, xi))


def null_covector(model: MetricModel, x, spatial_xi) -> np.ndarray:
    """Complete spatial frequencies to future-directed null covectors with dt/ds = 1.

    Solves g^{00} xi_0^2 + 2 g^{0i} xi_i xi_0 + g^{ij} xi_i xi_j = 0 for the
    root with dt/ds = 2 (g^{00} xi_0 + g^{0i} xi_i) > 0, then rescales.
    """
    x = np.atleast_2d(np.asarray(x, float))
    k = np.atleast_2d(np.asarray(spatial_xi, float))
    g = model.inv_metric(x)
    a = g[:, 0, 0]
    b = np.einsum("ni,ni->n", g[:, 0, 1:], k)
    c = np.einsum("ni,nij,nj->n", k, g[:, 1:, 1:], k)
    disc = b * b - a * c
    if np.any(disc <= 0) or np.any(a >= 0):
        raise ValueError("no future-directed null completion (dt not timelike at start)")
    root = np.sqrt(disc)
    xi0 = (root - b) / a
    xi = np.column_stack([xi0, k]) / (2.0 * root)[:, None]
    return xi


# ---------------------------------------------------------------------------
# embedded Runge-Kutta (Dormand-Prince 5(4)) with PI control, batched

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_BHAT = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _BHAT


def _dopri_step(f, y, k1, h):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h[:, None] * sum(a * kk for a, kk in zip(_A[i], ks))
        ks.append(f(yi))
    y_new = y + h[:, None] * sum(b * kk for b, kk in zip(_B, ks) if b != 0.0)
    err = h[:, None] * sum(e * kk for e, kk in zip(_E, ks) if e != 0.0)
    return y_new, err, ks[-1]


def _hermite_exit(x0, v0, x1, v1, h, R0, iters: int = 60):
    """Parameter theta in [0,1] where |x(theta)| = R0 on the cubic Hermite segment."""
    def pos(th):
        th = th[:, None]
        h00 = 2 * th**3 - 3 * th**2 + 1
        h10 = th**3 - 2 * th**2 + th
        h01 = -2 * th**3 + 3 * th**2
        h11 = th**3 - th**2
        return h00 * x0 + h10 * h[:, None] * v0 + h01 * x1 + h11 * h[:, None] * v1

    lo = np.zeros(len(h))
    hi = np.ones(len(h))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = np.linalg.norm(pos(mid), axis=1) <= R0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def _padded(fn):
    """Call a jitted batch kernel on power-of-two padded input to avoid retracing."""
    def call(y):
        m = len(y)
        size = 1 << max(m - 1, 0).bit_length()
        if size != m:
            y = np.vstack([y, np.repeat(y[-1:], size - m, axis=0)])
        return np.array(fn(y))[:m]
    return call


@dataclass
class _BatchResult:
    exit_s: np.ndarray
    entered: np.ndarray
    inside_at_end: np.ndarray
    done: np.ndarray
    max_drift: np.ndarray
    fmax: np.ndarray
    fmin: np.ndarray
    truncated: np.ndarray
    s_end: np.ndarray
    records: list | None = None


def integrate_batch(model: MetricModel, y0: np.ndarray, s_max: float, tol: float,
                    R0: float = np.inf, stop_radius: float | None = None,
                    record: bool = False, fixed_step: float | None = None,
                    max_steps: int = 2_000_000) -> _BatchResult:
    """Integrate many phase points at once; each member keeps its own step size."""
    rhs, ham = _compiled(model)
    f = _padded(rhs)
    symbol = _padded(lambda y: ham(y[:, :4], y[:, 4:]))

    y = np.array(y0, dtype=float, copy=True)
    n = len(y)
    s = np.zeros(n)
    h = np.full(n, fixed_step if fixed_step else min(1e-2, s_max))
    k1 = f(y)
    xi0 = np.linalg.norm(y[:, 4:], axis=1)
    r_start = np.linalg.norm(y[:, 1:4], axis=1)
    entered = r_start <= R0
    exit_s = np.full(n, np.nan)
    done = np.zeros(n, bool)
    truncated = np.zeros(n, bool)
    max_drift = np.zeros(n)
    fmax = np.ones(n)
    fmin = np.ones(n)
    prev_err = np.ones(n)
    p0 = symbol(y)
    scale0 = np.maximum(xi0**2, 1e-300)
    max_drift = np.abs(p0) / scale0
    records = [[np.concatenate([[0.0], y[i], [p0[i]]])] for i in range(n)] if record else None
    steps = 0
    while True:
        act = np.flatnonzero(~done & (s < s_max * (1 - 1e-15)))
        if act.size == 0:
            break
        steps += 1
        if steps > max_steps:
            raise StiffRegionError("stiff-region: step budget exhausted")
        ha = np.minimum(h[act], s_max - s[act])
        y_new, err, k7 = _dopri_step(f, y[act], k1[act], ha)
        if fixed_step:
            accept = np.ones(act.size, bool)
            enorm = np.zeros(act.size)
        else:
            sc = tol + tol * np.maximum(np.abs(y[act]), np.abs(y_new))
            enorm = np.max(np.abs(err) / sc, axis=1)
            enorm = np.where(np.isfinite(enorm), enorm, np.inf)
            accept = enorm <= 1.0
        finite = np.all(np.isfinite(y_new), axis=1)
        bad = accept & ~finite
        if np.any(bad):
            truncated[act[bad]] = True
            done[act[bad]] = True
            accept &= finite
        acc = act[accept]
        if acc.size:
            ya, yn, hacc = y[acc], y_new[accept], ha[accept]
            r_old = np.linalg.norm(ya[:, 1:4], axis=1)
            r_new = np.linalg.norm(yn[:, 1:4], axis=1)
            entered[acc] |= r_new <= R0
            cross = (r_old <= R0) & (r_new > R0)
            if np.any(cross):
                ci = np.flatnonzero(cross)
                th = _hermite_exit(ya[ci, 1:4], k1[acc[ci], 1:4], yn[ci, 1:4], k7[accept][ci, 1:4],
                                   hacc[ci], R0)
                exit_s[acc[ci]] = s[acc[ci]] + th * hacc[ci]
            s[acc] += hacc
            y[acc] = yn
            k1[acc] = k7[accept]
            pn = symbol(yn)
            xin = np.linalg.norm(yn[:, 4:], axis=1)
            max_drift[acc] = np.maximum(max_drift[acc], np.abs(pn) / np.maximum(xin**2, 1e-300))
            ratio = xin / xi0[acc]
            fmax[acc] = np.maximum(fmax[acc], ratio)
            fmin[acc] = np.minimum(fmin[acc], ratio)
            if record:
                for j, i in enumerate(acc):
                    records[i].append(np.concatenate([[s[i]], yn[j], [pn[j]]]))
            if stop_radius is not None:
                outgoing = np.einsum("ni,ni->n", yn[:, 1:4], k7[accept][:, 1:4]) > 0
                done[acc] |= (r_new > stop_radius) & outgoing
        if not fixed_step:
            safe = np.maximum(enorm, 1e-10)
            fac = np.where(accept, 0.9 * safe ** (-0.7 / 5) * prev_err[act] ** (0.4 / 5),
                           np.maximum(0.2, 0.9 * safe ** (-1 / 5)))
            fac = np.clip(np.where(np.isfinite(fac), fac, 0.2), 0.2, 5.0)
            fac = np.where(accept, fac, np.minimum(fac, 1.0))
            h[act] = ha * fac
            prev_err[act] = np.where(accept, safe, prev_err[act])
            tiny = (h[act] < 1e-13 * (1.0 + np.abs(s[act]))) & ~done[act]
            if np.any(tiny):
                i = act[np.argmax(tiny)]
                raise StiffRegionError(f"stiff-region: step size underflow at s={s[i]:.6g}, x={y[i, :4].tolist()}")
    inside_end = np.linalg.norm(y[:, 1:4], axis=1) <= R0
    recs = [np.array(r) for r in records] if record else None
    return _BatchResult(exit_s, entered, inside_end, done, max_drift, fmax, fmin, truncated, s, recs)


def integrate(model: MetricModel, start: PhasePoint, s_max: float, tol: float,
              R0: float = 10.0, stop_radius: float | None = None,
              fixed_step: float | None = None) -> FlowResult:
    """Adaptive Dormand-Prince integration of one null geodesic."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    y0 = np.concatenate([np.asarray(start.x, float), np.asarray(start.xi, float)])[None]
    res = integrate_batch(model, y0, s_max, tol, R0=R0, stop_radius=stop_radius, record=True,
                          fixed_step=fixed_step)
    traj = res.records[0]
    traj[:, 0] += start.s
    if not res.entered[0]:
        exit_s: float | str = NEVER_WITHIN
    elif np.isnan(res.exit_s[0]):
        exit_s = float("inf")
    else:
        exit_s = float(res.exit_s[0]) + start.s
    return FlowResult(traj, exit_s, float(res.max_drift[0]), (float(res.fmax[0]), float(res.fmin[0])),
                      bool(res.truncated[0]))


# ---------------------------------------------------------------------------
# non-trapping constant

@dataclass(frozen=True)
class EnsembleSpec:
    count: int = 512
    seed: int = 42
    s_max: float | None = None
    tol: float = 1e-8
    t0: float = 0.0
    extremal: bool = True
    extra_starts: tuple = ()  # ((x1,x2,x3), (k1,k2,k3)) pairs


@dataclass
class NontrappingResult:
    C: float
    A: float
    verdict: str
    failures: list[dict]
    exit_s: np.ndarray
    starts: np.ndarray
    freq_bounds: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def summary(self) -> dict:
        return {"C": self.C, "A": self.A, "verdict": self.verdict, "failures": self.failures,
                "count": int(len(self.exit_s))}


def ensemble_starts(R0: float, spec: EnsembleSpec) -> tuple[np.ndarray, np.ndarray]:
    """Positions uniform in the ball and frequencies uniform on the sphere."""
    rng = np.random.default_rng(spec.seed)
    n = spec.count
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pos = d * (R0 * rng.uniform(size=n) ** (1 / 3))[:, None]
    k = rng.normal(size=(n, 3))
    k /= np.linalg.norm(k, axis=1, keepdims=True)
    if spec.extremal:
        axes = np.vstack([np.eye(3), -np.eye(3)])
        pos = np.vstack([pos, R0 * axes])
        k = np.vstack([k, -axes])
    for p, q in spec.extra_starts:
        q = np.asarray(q, float)
        pos = np.vstack([pos, np.asarray(p, float)])
        k = np.vstack([k, q / np.linalg.norm(q)])
    return pos, k


def nontrapping_constant(model: MetricModel, R0: float, ensemble_spec: EnsembleSpec | None = None) -> NontrappingResult:
    """Max exit time from {r <= R0} over an ensemble, and the frequency bound A."""
    spec = ensemble_spec or EnsembleSpec()
    s_max = spec.s_max if spec.s_max is not None else 50.0 * R0 + 100.0
    pos, k = ensemble_starts(R0, spec)
    x = np.column_stack([np.full(len(pos), spec.t0), pos])
    xi = null_covector(model, x, k)
    y0 = np.hstack([x, xi])
    stop = max(3.0 * R0, R0 + 20.0)
    res = integrate_batch(model, y0, s_max, spec.tol, R0=R0, stop_radius=stop)
    trapped = ~res.done | res.inside_at_end | res.truncated
    failures = [{"x": pos[i].tolist(), "k": k[i].tolist(), "s_end": float(res.s_end[i])}
                for i in np.flatnonzero(trapped)]
    ex = np.where(np.isnan(res.exit_s), np.inf, res.exit_s)
    ex = np.where(trapped, np.inf, ex)
    A = float(np.max(np.maximum(res.fmax, 1.0 / res.fmin)))
    verdict = "possibly trapped" if failures else "non-trapping"
    C = float(np.max(ex)) if not failures else float("inf")
    return NontrappingResult(C, A, verdict, failures, ex, np.hstack([pos, k]),
                             np.column_stack([res.fmin, res.fmax]))


# ---------------------------------------------------------------------------
# timelike margin

@dataclass(frozen=True)
class TimelikeSpec:
    t_range: tuple[float, float] = (1.0, 1e3)
    r_max: float = 100.0
    n_t: int = 40
    n_r: int = 60
    n_dirs: int = 8


@dataclass(frozen=True)
class MarginResult:
    margin: float
    point: list
    passed: bool


def timelike_margin(model: MetricModel, sample_spec: TimelikeSpec | None = None) -> MarginResult:
    """min over samples of -g_00 from a 4x4 inversion of g^{ab}."""
    spec = sample_spec or TimelikeSpec()
    ts = np.geomspace(*spec.t_range, spec.n_t)
    rs = np.concatenate([[0.0], np.geomspace(1e-2, spec.r_max, spec.n_r - 1)])
    dirs = sphere_points(spec.n_dirs)
    tt, rr, dd = np.meshgrid(ts, rs, np.arange(spec.n_dirs), indexing="ij")
    pts = np.concatenate([tt[..., None], rr[..., None] * dirs[dd]], axis=-1).reshape(-1, 4)
    ginv = model.inv_metric(pts)
    cond = np.linalg.cond(ginv)
    if np.any(~np.isfinite(cond) | (cond > 1e14)):
        i = int(np.argmax(~np.isfinite(cond) | (cond > 1e14)))
        raise np.linalg.LinAlgError(f"singular inverse metric at {pts[i].tolist()}")
    g00 = np.linalg.inv(ginv)[:, 0, 0]
    i = int(np.argmax(g00))
    margin = float(-g00[i])
    return MarginResult(margin, pts[i].tolist(), margin > 0)
