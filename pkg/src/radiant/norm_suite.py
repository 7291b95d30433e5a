"""Weighted space-time and fixed-time norms of mode-decomposed fields.

Fields are stored per spherical-harmonic mode on (time samples) x (radial grid);
with unit-normalized harmonics every L^2 quantity is a sum over modes of
radial integrals with measure r^2 dr. Dyadic pieces in r, t and u are built on
<r>, <t>, <u> ~ 2^i. Sharp pieces are integrated exactly at their edges by
interpolating cumulative trapezoid sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.special import eval_legendre

from .metric_models import BondiChart, MetricModel, jap
from .wave_solver import SolutionTrace, mode_equation_coeffs, psi_to_phi


class SamplingError(ValueError):
    pass


class ScopeError(ValueError):
    pass


SPACETIME_KINDS = ("LE", "LE*", "LE^ab", "LE*^ab", "NLE", "NLE*", "ICH", "IICH", "S", "N", "N1-term", "tLE1")
FIXEDTIME_KINDS = ("CE", "ICE", "IICE", "H", "L2grad")


# ---------------------------------------------------------------------------
# fields

@dataclass(frozen=True)
class ModeField:
    """Per-mode samples f_l(t_n, r_j) with optional exact time derivatives."""

    times: np.ndarray
    r: np.ndarray
    values: Mapping[int, np.ndarray]
    dt_values: Mapping[int, np.ndarray] | None = None
    dtt_values: Mapping[int, np.ndarray] | None = None
    name: str = "phi"

    @property
    def modes(self):
        return sorted(self.values)

    def f(self, l):
        return self.values[l]

    def f_t(self, l):
        if self.dt_values is not None:
            return self.dt_values[l]
        if self.times.size < 2:
            raise SamplingError("insufficient sampling: time derivative needs two samples")
        return np.gradient(self.values[l], self.times, axis=0)

    def f_r(self, l):
        return np.gradient(self.values[l], self.r, axis=-1, edge_order=2)

    def f_tt(self, l):
        if self.dtt_values is not None:
            return self.dtt_values[l]
        return np.gradient(self.f_t(l), self.times, axis=0)

    def f_tr(self, l):
        return np.gradient(self.f_t(l), self.r, axis=-1, edge_order=2)

    def scaled(self, lam: float) -> "ModeField":
        sc = lambda d: None if d is None else {l: lam * v for l, v in d.items()}
        return replace(self, values=sc(self.values), dt_values=sc(self.dt_values), dtt_values=sc(self.dtt_values))

    def plus(self, other: "ModeField") -> "ModeField":
        def add(a, b):
            if a is None or b is None:
                return None
            keys = set(a) | set(b)
            z = np.zeros((self.times.size, self.r.size))
            return {l: a.get(l, z) + b.get(l, z) for l in keys}
        return ModeField(self.times, self.r, add(self.values, other.values), add(self.dt_values, other.dt_values),
                         add(self.dtt_values, other.dtt_values), self.name)


def field_from_trace(trace: SolutionTrace, model: MetricModel | None = None, source=None) -> ModeField:
    """phi_l and phi_t from snapshots; phi_tt from the mode equation when the model is given."""
    vals, dts, dtts = {}, {}, {}
    r = trace.r
    for l in trace.modes:
        phi, phi_t, phi_r = trace.phi_snapshots(l)
        vals[l], dts[l] = phi, phi_t
        if model is not None:
            T, R = np.meshgrid(trace.snap_times, r[1:], indexing="ij")
            ctt, ctr, crr, ct, cr, c0 = mode_equation_coeffs(model, l, T, R)
            dr = r[1] - r[0]
            phi_rr = np.gradient(phi_r, dr, axis=-1, edge_order=2)
            phi_tr = np.gradient(phi_t, dr, axis=-1, edge_order=2)
            F = 0.0 if source is None or l not in source else source[l](T, R)
            sl = slice(1, None)
            tt = np.zeros_like(phi)
            tt[:, sl] = (F - 2 * ctr * phi_tr[:, sl] - crr * phi_rr[:, sl] - ct * phi_t[:, sl]
                         - cr * phi_r[:, sl] - c0 * phi[:, sl]) / ctt
            tt[:, 0] = tt[:, 1]
            dtts[l] = tt
    return ModeField(trace.snap_times.copy(), r.copy(), vals, dts, dtts if model is not None else None)


def field_from_source(source: Mapping[int, Callable], times, r, name: str = "F") -> ModeField:
    """Sample F_l(t, r) callables on a (times x r) mesh; derivatives by differencing."""
    times, r = np.asarray(times, float), np.asarray(r, float)
    T, R = np.meshgrid(times, r, indexing="ij")
    return ModeField(times, r, {l: np.asarray(fn(T, R), float) for l, fn in source.items()}, name=name)


def field_from_function(fn: Callable, times, r, l: int = 0, dt_fn: Callable | None = None,
                        name: str = "phi") -> ModeField:
    times, r = np.asarray(times, float), np.asarray(r, float)
    T, R = np.meshgrid(times, r, indexing="ij")
    dts = None if dt_fn is None else {l: np.asarray(dt_fn(T, R), float)}
    return ModeField(times, r, {l: np.asarray(fn(T, R), float)}, dts, name=name)


# ---------------------------------------------------------------------------
# chart quantities on (t, r) meshes

@lru_cache(maxsize=16)
def _chart_kernel(chart: BondiChart):
    def scal(t, r):
        x = jnp.stack([t, r, 0.0 * r, 0.0 * r])
        jr, tm, tp, t0, tau = chart.weight_fns(x)
        g = chart.grad_fn(x)
        u = chart.u_fn(x)
        return jnp.stack([u, g[0], g[1], jr, tm, tp, t0, tau])

    def single(t, r):
        v, vt = jax.jvp(lambda s: scal(s, r), (t,), (jnp.ones_like(t),))
        vr = jax.jvp(lambda s: scal(t, s), (r,), (jnp.ones_like(r),))[1]
        return jnp.stack([v, vt, vr])

    return jax.jit(jax.vmap(single, out_axes=2))


_Q = ("u", "u_t", "u_r", "jr", "tau_minus", "tau_plus", "tau_zero", "tau")


@dataclass
class ChartMesh:
    """Chart quantities q, d_t q and d_r q on a (times x r) mesh."""

    val: dict
    dt: dict
    dr: dict

    @classmethod
    def build(cls, chart: BondiChart, times, r) -> "ChartMesh":
        T, R = np.meshgrid(np.asarray(times, float), np.asarray(r, float), indexing="ij")
        out = np.array(_chart_kernel(chart)(T.ravel(), R.ravel())).reshape(3, len(_Q), *T.shape)
        return cls(*({q: out[k, i] for i, q in enumerate(_Q)} for k in range(3)))


def _mesh(fld: ModeField, chart: BondiChart) -> ChartMesh:
    return ChartMesh.build(chart, fld.times, fld.r)


def weighted(fld: ModeField, mesh: ChartMesh, a: float = 0.0, b: float = 0.0, extra=None) -> ModeField:
    """tau_+^a tau_0^b (times optional extra (value, d_t)) applied to the field."""
    w = mesh.val["tau_plus"] ** a * mesh.val["tau_zero"] ** b
    w_t = w * (a * mesh.dt["tau_plus"] / mesh.val["tau_plus"] + b * mesh.dt["tau_zero"] / mesh.val["tau_zero"])
    if extra is not None:
        e, e_t = extra
        w, w_t = w * e, w_t * e + w * e_t
    vals = {l: w * fld.f(l) for l in fld.modes}
    dts = {l: w_t * fld.f(l) + w * fld.f_t(l) for l in fld.modes}
    return ModeField(fld.times, fld.r, vals, dts, None, fld.name)


def apply_field(fld: ModeField, which: str, mesh: ChartMesh) -> ModeField:
    """Gamma f for Gamma in {T, S}, with d_t(Gamma f) from second derivatives of f."""
    if which not in ("T", "S"):
        if which.startswith("Omega"):
            raise ScopeError("rotations out of numeric scope")
        raise ValueError(f"unknown field {which!r}")
    v, d = mesh.val, mesh.dt
    r = fld.r[None, :]
    if which == "T":
        a, a_t = 1.0 / v["u_t"], -d["u_t"] / v["u_t"] ** 2
        b = b_t = np.zeros_like(a)
    else:
        num = v["u"] - r * v["u_r"]
        num_t = d["u"] - r * d["u_r"]
        a = num / v["u_t"]
        a_t = num_t / v["u_t"] - num * d["u_t"] / v["u_t"] ** 2
        b, b_t = np.broadcast_to(r, a.shape), np.zeros_like(a)
    vals, dts = {}, {}
    for l in fld.modes:
        ft, fr = fld.f_t(l), fld.f_r(l)
        vals[l] = a * ft + b * fr
        dts[l] = a_t * ft + a * fld.f_tt(l) + b_t * fr + b * fld.f_tr(l)
    return ModeField(fld.times, fld.r, vals, dts, None, f"{which}{fld.name}")


def _ang(l, f, r):
    rs = np.where(r > 0, r, np.inf)
    return l * (l + 1) * (f / rs) ** 2


def grad_density(fld: ModeField) -> np.ndarray:
    """Sphere-integrated |(d_t, d_x) f|^2 summed over modes."""
    out = 0.0
    for l in fld.modes:
        out = out + fld.f_t(l) ** 2 + fld.f_r(l) ** 2 + _ang(l, fld.f(l), fld.r[None, :])
    return out


def tilde_density(fld: ModeField, mesh: ChartMesh, with_zero_order: bool = True) -> np.ndarray:
    """|(d~_x f, r^{-1} f)|^2 with d~_x = d_x - (u_x/u_t) d_t."""
    ratio = mesh.val["u_r"] / mesh.val["u_t"]
    r = fld.r[None, :]
    rs = np.where(r > 0, r, np.inf)
    out = 0.0
    for l in fld.modes:
        f = fld.f(l)
        out = out + (fld.f_r(l) - ratio * fld.f_t(l)) ** 2 + _ang(l, f, r)
        if with_zero_order:
            out = out + (f / rs) ** 2
    return out


def value_density(fld: ModeField) -> np.ndarray:
    return sum(fld.f(l) ** 2 for l in fld.modes)


def tilde_r(fld: ModeField, mesh: ChartMesh) -> ModeField:
    ratio = mesh.val["u_r"] / mesh.val["u_t"]
    return ModeField(fld.times, fld.r, {l: fld.f_r(l) - ratio * fld.f_t(l) for l in fld.modes},
                     None, None, f"dr~{fld.name}")


def conjugated(fld: ModeField, mesh: ChartMesh, omega: str) -> tuple[ModeField, tuple]:
    """Omega phi together with (Omega, d_t Omega) for Omega in {I, II}."""
    if omega == "I":
        om, om_t = mesh.val["jr"], mesh.dt["jr"]
    elif omega == "II":
        om = mesh.val["tau_minus"] * mesh.val["tau_plus"]
        om_t = mesh.dt["tau_minus"] * mesh.val["tau_plus"] + mesh.val["tau_minus"] * mesh.dt["tau_plus"]
    else:
        raise ValueError("omega must be 'I' or 'II'")
    return weighted(fld, mesh, extra=(om, om_t)), (om, om_t)


# ---------------------------------------------------------------------------
# dyadic partitions and block quadrature

def _jap_inv(x):
    """Nonnegative s with <s> = x."""
    return np.sqrt(np.maximum(x * x - 1.0, 0.0))


@dataclass(frozen=True)
class DyadicPartition:
    axis: str  # r | t | u
    style: str = "sharp"  # sharp | smooth
    index_range: tuple[int, int] = (0, 40)

    def __post_init__(self):
        if self.axis not in ("r", "t", "u") or self.style not in ("sharp", "smooth"):
            raise ValueError("axis in r|t|u and style in sharp|smooth")

    @property
    def indices(self):
        return range(self.index_range[0], self.index_range[1])

    def edges(self, i) -> tuple[float, float]:
        """Block i in the nonnegative coordinate: <x> in [2^i, 2^{i+1})."""
        return float(_jap_inv(2.0**i)), float(_jap_inv(2.0 ** (i + 1)))

    def weight(self, i, x):
        """Smooth cutoff chi_i at coordinate x (sharp style gives the indicator)."""
        s = np.log2(jap(np.abs(x)))
        if self.style == "sharp":
            return ((s >= i) & (s < i + 1)).astype(float) if i > self.index_range[0] else (s < i + 1).astype(float)
        lo = 1.0 if i == self.index_range[0] else _smooth(s - i + 0.5)
        return lo - _smooth(s - i - 0.5)

    def sum_weights(self, x):
        return sum(self.weight(i, x) for i in self.indices)


def _smooth(y):
    """C-infinity step from 0 (y <= 0) to 1 (y >= 1)."""
    y = np.clip(np.asarray(y, float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        b = np.where(y < 1, np.exp(-1.0 / np.where(y < 1, 1.0 - y, 1.0)), 0.0)
    return a / (a + b)


def _interval_integral(g, x, lo, hi):
    """Integral of the piecewise-linear interpolant of g over [lo, hi].

    Summed cell by cell rather than differenced from a cumulative integral, so
    nonnegative densities give nonnegative block values with no cancellation.
    """
    g2 = np.atleast_2d(g)
    lo = np.broadcast_to(np.clip(lo, x[0], x[-1]), g2.shape[:1])[:, None]
    hi = np.broadcast_to(np.clip(hi, x[0], x[-1]), g2.shape[:1])[:, None]
    a = np.clip(lo, x[:-1], x[1:])
    b = np.maximum(np.clip(hi, x[:-1], x[1:]), a)
    slope = np.diff(g2, axis=-1) / np.diff(x)
    ga = g2[:, :-1] + slope * (a - x[:-1])
    gb = g2[:, :-1] + slope * (b - x[:-1])
    out = np.sum(0.5 * (b - a) * (ga + gb), axis=-1)
    return out if np.ndim(g) > 1 else float(out[0])


def _time_integral(per_time, times, t0, t1):
    return float(_interval_integral(per_time, times, t0, t1))


@dataclass(frozen=True)
class NormValue:
    kind: str
    value: float
    interval: tuple[float, float]
    field: str
    err_est: float = 0.0


class _Integrator:
    """Block integrals of nonnegative densities g(t, r) r^2 over [t0, t1]."""

    def __init__(self, fld: ModeField, mesh: ChartMesh, interval, style: str = "sharp"):
        self.times, self.r, self.mesh = fld.times, fld.r, mesh
        t0, t1 = interval
        self.t0, self.t1 = t0, t1
        self.style = style
        self.rp = DyadicPartition("r", style)
        self.tp = DyadicPartition("t", style)
        self.up = DyadicPartition("u", style)
        tmax = max(float(self.r[-1]), 1.0)
        self.r_blocks = [i for i in self.rp.indices if self.rp.edges(i)[0] <= tmax]
        self.t_blocks = [k for k in self.tp.indices
                         if self.tp.edges(k)[0] <= t1 and self.tp.edges(k)[1] >= t0]
        umax = float(np.max(np.abs(mesh.val["u"]))) if mesh.val["u"].size else 0.0
        self.u_blocks = [j for j in self.up.indices if self.up.edges(j)[0] <= umax + 1.0]

    def _r_intervals(self, i, j=None):
        """Per-time r-intervals of r-block i (intersected with u-block j): list of (lo, hi) arrays."""
        a, b = self.rp.edges(i)
        nt = self.times.size
        base = (np.full(nt, a), np.full(nt, b))
        if j is None:
            return [base]
        ua, ub = self.up.edges(j)
        out = []
        u = self.mesh.val["u"]
        for sign in (1.0, -1.0):
            lo_u, hi_u = (ua, ub) if sign > 0 else (-ub, -ua)
            # u decreases in r at fixed t
            r_of = lambda level: np.array([np.interp(level, u[n, ::-1], self.r[::-1],
                                                     left=self.r[-1] * 2 + 1, right=-1.0) for n in range(nt)])
            r_lo, r_hi = r_of(hi_u), r_of(lo_u)
            lo = np.maximum(base[0], r_lo)
            hi = np.minimum(base[1], r_hi)
            out.append((lo, hi))
        return out

    def sharp_blocks(self, g, axes: str, t_block: int | None = None):
        """Dict block-key -> integral for axes 'r' or 'ur'; restricted to a t-block if given."""
        g = g * self.r[None, :] ** 2
        t0, t1 = self.t0, self.t1
        if t_block is not None:
            ta, tb = self.tp.edges(t_block)
            t0, t1 = max(t0, ta), min(t1, tb)
        out = {}
        for i in self.r_blocks:
            for j in (self.u_blocks if axes == "ur" else [None]):
                tot = 0.0
                for lo, hi in self._r_intervals(i, j):
                    per_t = _interval_integral(g, self.r, lo, hi)
                    tot += _time_integral(per_t, self.times, t0, t1) if t1 > t0 else 0.0
                out[(i, j)] = tot
        return out

    def smooth_blocks(self, g, axes: str, t_block: int | None = None):
        g = g * self.r[None, :] ** 2
        tw = np.ones(self.times.size) if t_block is None else self.tp.weight(t_block, self.times) ** 2
        out = {}
        for i in self.r_blocks:
            rw = self.rp.weight(i, self.r)[None, :] ** 2
            for j in (self.u_blocks if axes == "ur" else [None]):
                uw = 1.0 if j is None else self.up.weight(j, self.mesh.val["u"]) ** 2
                per_t = np.trapezoid(g * rw * uw, self.r, axis=-1) * tw
                out[(i, j)] = _time_integral(per_t, self.times, self.t0, self.t1)
        return out

    def blocks(self, g, axes: str = "r", t_block=None):
        fn = self.sharp_blocks if self.style == "sharp" else self.smooth_blocks
        return fn(g, axes, t_block)

    def total(self, g):
        per_t = np.trapezoid(g * self.r[None, :] ** 2, self.r, axis=-1)
        return _time_integral(per_t, self.times, self.t0, self.t1)


def _lp(blocks: dict, p: float) -> float:
    vals = np.sqrt(np.maximum(np.array(list(blocks.values()) or [0.0]), 0.0))
    return float(vals.max()) if p == np.inf else float(vals.sum())


def _check_sampling(fld: ModeField, interval):
    t0, t1 = interval
    ts = fld.times
    if t1 < t0:
        raise ValueError("interval must satisfy t0 <= t1")
    if ts.size < 2 or ts[0] > t0 + 1e-9 or ts[-1] < t1 - 1e-9:
        raise SamplingError("insufficient sampling: snapshots do not cover the interval")
    inside = ts[(ts >= t0 - 1e-12) & (ts <= t1 + 1e-12)]
    pts = np.unique(np.concatenate([[t0, t1], inside]))
    spacing = float(np.max(np.diff(pts))) if pts.size > 1 else 0.0
    tp = DyadicPartition("t")
    smallest = min(tp.edges(k)[1] - tp.edges(k)[0] for k in tp.indices
                   if tp.edges(k)[0] <= t1 and tp.edges(k)[1] >= t0)
    if spacing > min(smallest, max(t1 - t0, 0.0)) + 1e-12:
        raise SamplingError(f"insufficient sampling: snapshot spacing {spacing:.3g} exceeds "
                            f"the smallest dyadic t-block {smallest:.3g}")


# ---------------------------------------------------------------------------
# norm recipes

def _le(it, fld, mesh, t_block=None, a=0.0, b=0.0):
    w = weighted(fld, mesh, a, b) if (a or b) else fld
    jr = mesh.val["jr"]
    g1 = grad_density(w) / jr
    g0 = value_density(w) / jr**3
    return _lp(it.blocks(g1, "r", t_block), np.inf) + _lp(it.blocks(g0, "r", t_block), np.inf)


def _le_star(it, fld, mesh, a=0.0, b=0.0, mask=None):
    w = mesh.val["tau_plus"] ** a * mesh.val["tau_zero"] ** b
    g = value_density(fld) * mesh.val["jr"] * w**2
    if mask is not None:
        g = g * mask
    return _lp(it.blocks(g, "r"), 1)


def _nle(it, fld, mesh, a=0.0, b=0.0, mask=None, star=False):
    w = mesh.val["tau_plus"] ** a * mesh.val["tau_zero"] ** b
    jr = mesh.val["jr"]
    g = value_density(fld) * w**2 * (jr if star else 1.0 / jr)
    if mask is not None:
        g = g * mask
    return _lp(it.blocks(g, "ur"), 1 if star else np.inf)


def _regions(fld: ModeField):
    T, R = np.meshgrid(fld.times, fld.r, indexing="ij")
    inner = (R < 0.5 * T).astype(float)
    outer = (R > 2.0 * T).astype(float)
    return inner, 1.0 - inner - outer, outer


def _ch(it, fld, mesh, omega):
    conj, (om, _) = conjugated(fld, mesh, omega)
    dtr = tilde_r(conj, mesh)
    scaled = ModeField(dtr.times, dtr.r, {l: v / om for l, v in dtr.values.items()})
    # <r>^{1/2} inside, <r>^{-1/2} from NLE
    g = value_density(scaled) * mesh.val["tau_plus"] / mesh.val["tau_zero"]
    return _lp(it.blocks(g, "ur"), np.inf)


def _t_le1(it, fld, mesh):
    """l^inf_t LE^1 of chi_{r < t/2} phi; sharp regions take derivatives before cutting."""
    inner, _, _ = _regions(fld)
    w = weighted(fld, mesh, 1.0, 0.0)
    jr = mesh.val["jr"]
    g1 = inner * grad_density(w) / jr
    g0 = inner * value_density(w) / jr**3
    return max((_lp(it.blocks(g1, "r", k), np.inf) + _lp(it.blocks(g0, "r", k), np.inf)
                for k in it.t_blocks), default=0.0)


def _s_norm(it, fld, mesh):
    return _ch(it, fld, mesh, "I") + _ch(it, fld, mesh, "II") + _t_le1(it, fld, mesh)


def _n_norm(it, fld, mesh):
    inner, mid, outer = _regions(fld)
    return _le_star(it, fld, mesh, 1.0, 0.5, mask=inner + outer) + _nle(it, fld, mesh, 1.0, 0.5, mask=mid, star=True)


def _n1_extra(it, fld, mesh, gamma):
    inner, _, _ = _regions(fld)
    w = weighted(fld, mesh, 2.0 - gamma / 4.0, 0.0)
    jr = mesh.val["jr"]
    g1 = inner * grad_density(w) / jr
    g0 = inner * value_density(w) / jr**3
    return _lp(it.blocks(g1, "r"), np.inf) + _lp(it.blocks(g0, "r"), np.inf)


def _as_field(trace, model=None) -> ModeField:
    if isinstance(trace, ModeField):
        return trace
    if isinstance(trace, SolutionTrace):
        return field_from_trace(trace, model)
    raise TypeError("expected a ModeField or SolutionTrace")


def _halved(fld: ModeField) -> ModeField:
    """Every other time sample and radial node (ends kept)."""
    ti = np.unique(np.concatenate([np.arange(0, fld.times.size, 2), [fld.times.size - 1]]))
    ri = np.unique(np.concatenate([np.arange(0, fld.r.size, 2), [fld.r.size - 1]]))
    pick = lambda d: None if d is None else {l: v[np.ix_(ti, ri)] for l, v in d.items()}
    return ModeField(fld.times[ti], fld.r[ri], pick(fld.values), pick(fld.dt_values), pick(fld.dtt_values), fld.name)


def _spacetime_value(kind, fld, model, chart, interval, style, a, b, gamma):
    mesh = _mesh(fld, chart)
    it = _Integrator(fld, mesh, interval, style)
    if kind == "LE":
        return _le(it, fld, mesh)
    if kind == "LE^ab":
        return _le(it, fld, mesh, a=a, b=b)
    if kind == "LE*":
        return _le_star(it, fld, mesh)
    if kind == "LE*^ab":
        return _le_star(it, fld, mesh, a, b)
    if kind == "NLE":
        return _nle(it, fld, mesh, a, b)
    if kind == "NLE*":
        return _nle(it, fld, mesh, a, b, star=True)
    if kind == "ICH":
        return _ch(it, fld, mesh, "I")
    if kind == "IICH":
        return _ch(it, fld, mesh, "II")
    if kind == "S":
        return _s_norm(it, fld, mesh)
    if kind == "N":
        return _n_norm(it, fld, mesh)
    if kind == "N1-term":
        return _n1_extra(it, fld, mesh, gamma)
    if kind == "tLE1":
        return _t_le1(it, fld, mesh)
    raise ValueError(f"unknown space-time norm {kind!r}")


def spacetime_norm(kind: str, trace, model: MetricModel, chart: BondiChart | None = None,
                   interval: tuple[float, float] = (0.0, 1.0), *, style: str = "sharp",
                   a: float = 0.0, b: float = 0.0, gamma: float | None = None,
                   estimate_error: bool = True) -> NormValue:
    """Space-time norm of a field over [t0, t1].

    ``a``, ``b`` are the tau_+ and tau_0 powers of the weighted kinds (LE^ab,
    LE*^ab, NLE, NLE*). 'N1-term' is the extra interior piece of N_1 and M_1;
    'tLE1' is the l^inf_t LE^1 norm of chi_{r<t/2} phi.
    """
    chart = chart or model.chart
    fld = _as_field(trace, model)
    _check_sampling(fld, interval)
    gamma = model.profile.gamma if gamma is None else gamma
    val = _spacetime_value(kind, fld, model, chart, interval, style, a, b, gamma)
    err = 0.0
    if estimate_error and fld.times.size > 4 and fld.r.size > 8:
        try:
            err = abs(val - _spacetime_value(kind, _halved(fld), model, chart, interval, style, a, b, gamma))
        except SamplingError:
            err = float("nan")
    return NormValue(kind, val, tuple(interval), fld.name, err)


# ---------------------------------------------------------------------------
# fixed-time norms

def _at_time(fld: ModeField, t: float) -> int:
    k = int(np.argmin(np.abs(fld.times - t)))
    if abs(fld.times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise SamplingError(f"no snapshot at t = {t}")
    return k


def _slice(fld: ModeField, k: int) -> ModeField:
    pick = lambda d: None if d is None else {l: v[k:k + 1] for l, v in d.items()}
    dts = {l: fld.f_t(l)[k:k + 1] for l in fld.modes}
    return ModeField(fld.times[k:k + 1], fld.r, pick(fld.values), dts, pick(fld.dtt_values), fld.name)


def _space_l2(g, r):
    return float(np.sqrt(max(np.trapezoid(g[0] * r**2, r), 0.0)))


def h_norm_modes(f0: Mapping[int, np.ndarray], f1: Mapping[int, np.ndarray], r, a: float = 1.0,
                 s: int = 0, k: int = 1) -> float:
    """sum_{|I|<=s, |J|<=k} ||<r>^{a+|J|} grad_x^{I+J} f|| for f = (f1, grad_x f0), s + k <= 1."""
    if s + k > 1:
        raise ScopeError("H^{s,a}_k is implemented for s + k <= 1")
    r = np.asarray(r, float)
    rs = np.where(r > 0, r, 1.0)
    order0 = order1 = 0.0
    for l in sorted(set(f0) | set(f1)):
        lam = l * (l + 1)
        p0 = np.asarray(f0.get(l, np.zeros_like(r)), float)
        p1 = np.asarray(f1.get(l, np.zeros_like(r)), float)
        d0 = np.gradient(p0, r, edge_order=2)
        d1 = np.gradient(p1, r, edge_order=2)
        dd0 = np.gradient(d0, r, edge_order=2)
        ang, rad = p0 / rs**2, d0 / rs
        order0 += np.trapezoid(jap(r) ** (2 * a) * (p1**2 + d0**2 + lam * (p0 / rs) ** 2) * r**2, r)
        # sphere-averaged |Hess(p0 Y)|^2 for a unit-normalized harmonic of degree l
        hess = dd0**2 + 2 * lam * (rad - ang) ** 2 + (lam * lam - lam) * ang**2 - 2 * lam * ang * rad + 2 * rad**2
        order1 += np.trapezoid(jap(r) ** (2 * a + 2) * (d1**2 + lam * (p1 / rs) ** 2 + hess) * r**2, r)
    return float(np.sqrt(order0) + (np.sqrt(order1) if s + k >= 1 else 0.0))


def fixedtime_norm(kind: str, trace, model: MetricModel, chart: BondiChart | None = None, t: float = 0.0,
                   *, a: float = 1.0, s: int = 0, k: int = 1, estimate_error: bool = True) -> NormValue:
    """CE, ICE, IICE, H (H^{s,a}_k of grad phi) or L2grad at a snapshot time."""
    chart = chart or model.chart
    fld = _as_field(trace, model)
    val = _fixed_value(kind, fld, chart, t, a, s, k)
    err = 0.0
    if estimate_error and fld.r.size > 8:
        sl = _slice(fld, _at_time(fld, t))
        ri = np.unique(np.concatenate([np.arange(0, sl.r.size, 2), [sl.r.size - 1]]))
        half = ModeField(sl.times, sl.r[ri], {l: sl.f(l)[:, ri] for l in sl.modes},
                         {l: sl.f_t(l)[:, ri] for l in sl.modes})
        err = abs(val - _fixed_value(kind, half, chart, t, a, s, k))
    return NormValue(kind, val, (t, t), fld.name, err)


def _fixed_value(kind, fld, chart, t, a, s, k):
    sl = _slice(fld, _at_time(fld, t))
    mesh = _mesh(sl, chart)
    r = sl.r
    if kind == "L2grad":
        return _space_l2(grad_density(sl), r)
    if kind == "H":
        f0 = {l: sl.f(l)[0] for l in sl.modes}
        f1 = {l: sl.f_t(l)[0] for l in sl.modes}
        return h_norm_modes(f0, f1, r, a, s, k)
    tp, t0 = mesh.val["tau_plus"], mesh.val["tau_zero"]
    if kind == "CE":
        return _space_l2(grad_density(sl) * (tp * t0) ** 2, r) + _space_l2(tilde_density(sl, mesh) * tp**2, r)
    if kind in ("ICE", "IICE"):
        conj, (om, _) = conjugated(sl, mesh, "I" if kind == "ICE" else "II")
        g1 = grad_density(conj) / om**2
        g2 = tilde_density(conj, mesh, with_zero_order=False) / om**2
        return _space_l2(g1 * (tp * t0) ** 2, r) + _space_l2(g2 * tp**2, r)
    raise ValueError(f"unknown fixed-time norm {kind!r}")


# ---------------------------------------------------------------------------
# higher order and pointwise

def higher_order_norm(kind: str, trace, model: MetricModel, fields: Sequence[str] = ("T", "S"),
                      chart: BondiChart | None = None, interval=(0.0, 1.0), t: float | None = None,
                      **kw) -> NormValue:
    """Base norm of phi plus the base norm of Gamma phi for each requested Gamma.

    ``kind`` is a base kind (CE, LE, S, N, ...) or 'M1' for the source norm with
    (tau_+ tau_0 d_u)^k (r d~_x)^J, k + |J| <= 1.
    """
    chart = chart or model.chart
    fld = _as_field(trace, model)
    for f in fields:
        if f.startswith("Omega"):
            raise ScopeError("rotations out of numeric scope")
    mesh = _mesh(fld, chart)
    fixed = kind in FIXEDTIME_KINDS

    def base(f, k=kind):
        if fixed:
            return fixedtime_norm(k, f, model, chart, t, **kw)
        return spacetime_norm(k, f, model, chart, interval, **kw)

    if kind == "M1":
        parts = [spacetime_norm("N", fld, model, chart, interval, **kw)]
        du = apply_field(fld, "T", mesh)
        w = mesh.val["tau_plus"] * mesh.val["tau_zero"]
        parts.append(spacetime_norm("N", ModeField(fld.times, fld.r, {l: w * v for l, v in du.values.items()}),
                                    model, chart, interval, **kw))
        parts.append(spacetime_norm("N", _r_tilde_x(fld, mesh), model, chart, interval, **kw))
        parts.append(spacetime_norm("N1-term", fld, model, chart, interval, **kw))
    else:
        parts = [base(fld)] + [base(apply_field(fld, f, mesh)) for f in fields]
        if kind == "N":
            parts.append(spacetime_norm("N1-term", fld, model, chart, interval, **kw))
    total = sum(p.value for p in parts)
    err = sum(p.err_est for p in parts)
    span = (t, t) if fixed else tuple(interval)
    return NormValue(f"{kind}_1", total, span, fld.name, err)


def _r_tilde_x(fld: ModeField, mesh: ChartMesh) -> ModeField:
    """A scalar mode field whose value density equals |r d~_x f|^2 (radial and angular parts)."""
    ratio = mesh.val["u_r"] / mesh.val["u_t"]
    r = fld.r[None, :]
    vals = {}
    for l in fld.modes:
        rad = r * (fld.f_r(l) - ratio * fld.f_t(l))
        vals[l] = np.sqrt(rad**2 + l * (l + 1) * fld.f(l) ** 2)
    return ModeField(fld.times, fld.r, vals, name=f"r d~x {fld.name}")


@dataclass(frozen=True)
class WeightedLinf:
    value: float
    times: np.ndarray
    envelope: np.ndarray
    argmax: tuple[float, float]


def pointwise_values(fld: ModeField, n_theta: int = 33) -> np.ndarray:
    """max over angles of |sum_l phi_l Y_l0|, shape (n_times, n_r)."""
    mu = np.cos(np.linspace(0.0, np.pi, n_theta))
    total = 0.0
    for l in fld.modes:
        y = np.sqrt((2 * l + 1) / (4 * np.pi)) * eval_legendre(l, mu)
        total = total + fld.f(l)[..., None] * y
    return np.max(np.abs(total), axis=-1)


def weighted_linf(trace, chart: BondiChart, interval=(0.0, np.inf), model=None) -> WeightedLinf:
    """sup of tau_+^{3/2} tau_0^{1/2} |phi| over snapshots (and interior probes) in the interval."""
    fld = _as_field(trace, model)
    t0, t1 = interval
    sel = (fld.times >= t0) & (fld.times <= t1)
    times = fld.times[sel]
    if times.size == 0:
        return WeightedLinf(0.0, times, np.zeros(0), (float("nan"), float("nan")))
    sub = ModeField(times, fld.r, {l: v[sel] for l, v in fld.values.items()})
    mesh = _mesh(sub, chart)
    w = mesh.val["tau_plus"] ** 1.5 * mesh.val["tau_zero"] ** 0.5
    vals = w * pointwise_values(sub)
    env = vals.max(axis=1)
    n, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    best, where = float(vals[n, j]), (float(times[n]), float(fld.r[j]))
    if isinstance(trace, SolutionTrace):
        for l, m in trace.modes.items():
            if m.interior.size == 0:
                continue
            ps = (m.times >= t0) & (m.times <= t1)
            for k, ro in enumerate(trace.probes.r_obs):
                tt = m.times[ps]
                if tt.size == 0:
                    continue
                pm = ChartMesh.build(chart, tt, np.array([ro]))
                ww = (pm.val["tau_plus"] ** 1.5 * pm.val["tau_zero"] ** 0.5)[:, 0]
                y = np.sqrt((2 * l + 1) / (4 * np.pi))
                pv = ww * np.abs(m.interior[ps, k, 0]) * y
                if pv.size and pv.max() > best and len(trace.modes) == 1:
                    best = float(pv.max())
                    where = (float(tt[np.argmax(pv)]), float(ro))
    return WeightedLinf(best, times, env, where)
