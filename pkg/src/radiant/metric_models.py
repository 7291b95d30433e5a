"""Metric models, Bondi charts, weight functions and the decay-assumption checker.

All built-in models are spherically symmetric. Their inverse metric in (t, x)
coordinates is assembled from four radial coefficient functions

    g^{tt} = A,  g^{ti} = B w^i,  g^{ij} = C w^i w^j + D (delta^{ij} - w^i w^j)

with w = x/r. Component functions are written in ``jax.numpy`` so that exact
derivatives of any order come from automatic differentiation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.interpolate import CubicSpline

from . import finite_diff

MODEL_IDS = ("minkowski", "schwarzschild_tail", "radiating", "custom-table")
CLASS_NAMES = ("g_ij", "dg_ui", "g_ui_tan", "g_uu")
# tau_0 exponent attached to each component class in the symbol bounds
CLASS_TAU0_POWER = {"g_ij": 0.0, "dg_ui": 0.5, "g_ui_tan": 1.0, "g_uu": 2.0}
_CLASS_SLICES = {"g_ij": slice(0, 9), "dg_ui": slice(9, 12), "g_ui_tan": slice(12, 15),
                 "g_uu": slice(15, 16)}
_DET_SLICE = slice(16, 17)


class ModelError(ValueError):
    """Invalid model parameters or a model that fails its structural checks."""


class ChartError(ValueError):
    """Degenerate or invalid Bondi chart."""


# ---------------------------------------------------------------------------
# scalar helpers (jax)

def smoothstep(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    def bump(y):
        pos = y > 0
        return jnp.where(pos, jnp.exp(-1.0 / jnp.where(pos, y, 1.0)), 0.0)
    a, b = bump(x), bump(1.0 - x)
    return a / (a + b)


def jap(x):
    return jnp.sqrt(1.0 + x * x)


def safe_norm(v):
    """Euclidean norm with a zero (not NaN) derivative at the origin."""
    r2 = jnp.sum(v * v, axis=-1)
    pos = r2 > 0
    return jnp.where(pos, jnp.sqrt(jnp.where(pos, r2, 1.0)), 0.0)


def radial_unit(v):
    """omega = x/r, computed as the gradient of ``safe_norm`` (zero at r = 0)."""
    return jax.grad(safe_norm)(v)


def _as_points(x) -> tuple[np.ndarray, tuple]:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 4:
        raise ValueError("points must have trailing dimension 4 (t, x1, x2, x3)")
    return x.reshape(-1, 4), x.shape[:-1]


def _batched(fn):
    return jax.jit(jax.vmap(fn))


# ---------------------------------------------------------------------------
# profiles, charts, weights

@dataclass(frozen=True)
class AsymptoticProfile:
    delta: float = 1.0
    gamma: float = 0.5
    C_tau: float = 10.0
    amplitude: float = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ModelError("delta must be positive")
        if not 0 < self.gamma < self.delta:
            raise ModelError("gamma must satisfy 0 < gamma < delta")
        if not self.C_tau > 1:
            raise ModelError("C_tau must exceed 1 so that tau_plus > 1 on t >= 0")


@dataclass(frozen=True)
class BlendSpec:
    """Replace u by t - r where the flat tau_0 exceeds ``hi`` or where t < 1.

    The blend weight is 1 - smoothstep((tau_0 - lo)/(hi - lo)), switched on
    smoothly over 1 < t < 2.
    """

    lo: float = 0.02
    hi: float = 0.04


@dataclass(frozen=True, eq=False)
class BondiChart:
    """A spherically symmetric retarded-time function u(t, r)."""

    u_radial: Callable
    C_tau: float = 10.0
    blend: BlendSpec | None = None
    name: str = "t-r"

    def u_tr(self, t, r):
        u = self.u_radial(t, r)
        if self.blend is None:
            return u
        flat = t - r
        tau0 = jap(flat) / (self.C_tau + t + r)
        b = self.blend
        w = (1.0 - smoothstep((tau0 - b.lo) / (b.hi - b.lo))) * smoothstep(t - 1.0)
        return w * u + (1.0 - w) * flat

    def u_fn(self, x):
        return self.u_tr(x[0], safe_norm(x[1:]))

    def grad_fn(self, x):
        r = safe_norm(x[1:])
        u_t, u_r = jax.grad(self.u_tr, argnums=(0, 1))(x[0], r)
        return jnp.concatenate([u_t[None], u_r * radial_unit(x[1:])])

    def weight_fns(self, x):
        """(<r>, tau_minus, tau_plus, tau_zero, tau) at a point, in jax."""
        r = safe_norm(x[1:])
        u = self.u_tr(x[0], r)
        tm = jap(u)
        tp = self.C_tau + u + 2.0 * r
        return jap(r), tm, tp, tm / tp, tp / jap(r)

    @cached_property
    def _u_vec(self):
        return _batched(self.u_fn)

    @cached_property
    def _grad_vec(self):
        return _batched(self.grad_fn)

    @cached_property
    def _w_vec(self):
        return _batched(lambda x: jnp.stack(self.weight_fns(x)))

    def u(self, x) -> np.ndarray:
        pts, shape = _as_points(x)
        return np.asarray(self._u_vec(pts)).reshape(shape)

    def grad_u(self, x) -> np.ndarray:
        pts, shape = _as_points(x)
        return np.asarray(self._grad_vec(pts)).reshape(shape + (4,))

    def weights(self, x) -> "WeightSet":
        pts, shape = _as_points(x)
        w = np.asarray(self._w_vec(pts)).reshape(shape + (5,))
        return WeightSet(*(w[..., i] for i in range(5)))


@dataclass(frozen=True)
class WeightSet:
    jap_r: np.ndarray
    tau_minus: np.ndarray
    tau_plus: np.ndarray
    tau_zero: np.ndarray
    tau: np.ndarray


def flat_chart(C_tau: float = 10.0) -> BondiChart:
    return BondiChart(lambda t, r: t - r, C_tau=C_tau, name="t-r")


def time_chart(C_tau: float = 10.0) -> BondiChart:
    """u = t; the Bondi transform is then a relabeling."""
    return BondiChart(lambda t, r: t + 0.0 * r, C_tau=C_tau, name="t")


# ---------------------------------------------------------------------------
# metric models

@dataclass(frozen=True, eq=False)
class RadialCoefficients:
    """coeffs(t, r) -> (A, B, C, D) as jax scalars; see module docstring."""

    coeffs: Callable
    static: bool = False  # coefficients independent of t

    def inv_fn(self, x):
        r = safe_norm(x[1:])
        w = radial_unit(x[1:])
        a, b, c, d = self.coeffs(x[0], r)
        proj = jnp.outer(w, w)
        gij = c * proj + d * (jnp.eye(3) - proj)
        g0i = b * w
        top = jnp.concatenate([a[None], g0i])
        return jnp.vstack([top[None, :], jnp.column_stack([g0i, gij])])

    def dsqrt_tr(self, t, r):
        a, b, c, d = self.coeffs(t, r)
        return 1.0 / (jnp.sqrt(b * b - a * c) * d)


@dataclass(frozen=True, eq=False)
class MetricModel:
    id: str
    profile: AsymptoticProfile
    chart: BondiChart
    inv_fn: Callable
    radial: RadialCoefficients | None = None
    deriv_order: int = 4
    params: dict = field(default_factory=dict)

    @property
    def spherical(self) -> bool:
        return self.radial is not None

    def dsqrt_fn(self, x):
        if self.radial is not None:
            return self.radial.dsqrt_tr(x[0], safe_norm(x[1:]))
        return 1.0 / jnp.sqrt(jnp.abs(jnp.linalg.det(self.inv_fn(x))))

    def metric_fn(self, x):
        return jnp.linalg.inv(self.inv_fn(x))

    @cached_property
    def _inv_vec(self):
        return _batched(self.inv_fn)

    @cached_property
    def _dsqrt_vec(self):
        return _batched(self.dsqrt_fn)

    @cached_property
    def _dinv_vec(self):
        return _batched(jax.jacfwd(self.inv_fn))

    def inv_metric(self, x) -> np.ndarray:
        pts, shape = _as_points(x)
        return np.asarray(self._inv_vec(pts)).reshape(shape + (4, 4))

    def det_sqrt(self, x) -> np.ndarray:
        pts, shape = _as_points(x)
        return np.asarray(self._dsqrt_vec(pts)).reshape(shape)

    def metric(self, x) -> np.ndarray:
        return np.linalg.inv(self.inv_metric(x))

    def inv_metric_grad(self, x) -> np.ndarray:
        """d g^{ab} / d x^c, last axis c."""
        pts, shape = _as_points(x)
        return np.asarray(self._dinv_vec(pts)).reshape(shape + (4, 4, 4))

    def radial_coeffs(self, t, r) -> tuple[np.ndarray, ...]:
        """(A, B, C, D) on broadcast arrays of t and r."""
        if self.radial is None:
            raise ModelError("solver requires spherical symmetry")
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        fn = self._radial_vec
        out = np.asarray(fn(t.ravel(), r.ravel()))
        return tuple(out[i].reshape(t.shape) for i in range(4))

    @cached_property
    def _radial_vec(self):
        return jax.jit(jax.vmap(lambda t, r: jnp.stack(self.radial.coeffs(t, r)), out_axes=1))


def _minkowski_coeffs(t, r):
    one = jnp.ones_like(r + t)
    return -one, 0.0 * one, one, one


def _schwarzschild_parts(mass: float, core: tuple[float, float]):
    lo, hi = core[0] * mass, core[1] * mass

    def chi(r):
        return smoothstep((r - lo) / (hi - lo))

    def lapse(r):
        return 1.0 - 2.0 * mass * chi(r) / jnp.where(r > 0, r, 1.0)

    def coeffs(t, r):
        f = lapse(r) + 0.0 * t
        return -1.0 / f, 0.0 * f, f, jnp.ones_like(f)

    def u_radial(t, r):
        ok = r > lo
        arg = jnp.where(ok, r / (2.0 * mass) - 1.0, 1.0)
        rstar = r + 2.0 * mass * chi(r) * jnp.log(arg)
        return t - rstar

    return coeffs, u_radial


def _radiating_parts(delta: float, amp: float, C_tau: float):
    def bondi(t, r):
        u = t - r
        tm = jap(u)
        tp = C_tau + u + 2.0 * r
        t0 = tm / tp
        decay = amp * smoothstep(r - 1.0) * jap(r) ** (-delta)
        phase = jnp.log(tp)
        e = decay * t0**2
        c = 1.0 + decay * (1.0 + 0.1 * jnp.sin(phase + 1.0))
        d = 1.0 + decay * jnp.sqrt(t0) * (1.0 + 0.1 * jnp.sin(phase + 2.0))
        return e, c, d

    def coeffs(t, r):
        e, c, d = bondi(t, r)
        f = -1.0
        return e + 2.0 * f + c, f + c, c, d

    return coeffs


def _tabulated_radial(r_table, columns: np.ndarray, h: float):
    """Static radial profile from a table, differentiated by finite differences.

    Values come from cubic splines; every derivative order is produced by a
    Richardson-extrapolated central difference of the spline evaluation, so
    the jax tracer only ever sees callbacks.
    """
    splines = [CubicSpline(r_table, col, bc_type="clamped") for col in columns]
    r_hi = float(r_table[-1])

    def values(rr):
        rr = np.clip(np.abs(np.asarray(rr, float)), 0.0, r_hi)
        return np.stack([s(rr) for s in splines], axis=-1)

    def make(order: int):
        @jax.custom_jvp
        def f(r):
            shape = jax.ShapeDtypeStruct(r.shape + (len(splines),), jnp.float64)
            cb = lambda rr: finite_diff.derivative(values, rr, order, h).astype(np.float64)
            return jax.pure_callback(cb, shape, r, vmap_method="expand_dims")

        @f.defjvp
        def f_jvp(primals, tangents):
            (r,), (dr,) = primals, tangents
            return f(r), make(order + 1)(r) * dr[..., None]

        return f

    return make(0)


def _check_lorentzian(model: MetricModel):
    ts = np.array([0.0, 1.0, 10.0, 100.0, 1e3, 1e4])
    rs = np.concatenate([[0.0], np.geomspace(1e-2, 1e4, 40)])
    tt, rr = np.meshgrid(ts, rs, indexing="ij")
    pts = np.stack([tt, rr, 0 * rr, 0 * rr], axis=-1).reshape(-1, 4)
    g = model.inv_metric(pts)
    ok = np.all(np.isfinite(g), axis=(1, 2))
    spatial = np.linalg.eigvalsh(g[:, 1:, 1:])
    ok &= spatial[:, 0] > 0
    ok &= np.linalg.det(g) < 0
    if not np.all(ok):
        bad = pts[np.argmin(ok)]
        raise ModelError(f"model {model.id} is not Lorentzian at (t, r) = ({bad[0]:g}, {bad[1]:g})")


def make_model(id: str, profile: AsymptoticProfile | None = None, *, mass: float | None = None,
               core: tuple[float, float] = (3.0, 6.0), blend: BlendSpec | None = None,
               table: dict | None = None) -> MetricModel:
    """Instantiate a built-in model family.

    schwarzschild_tail uses f = 1 - 2 M chi(r)/r with chi a smooth step from
    ``core[0]*M`` to ``core[1]*M``; with the default core no horizon and no
    photon sphere lie in the domain. A core below 3M keeps the photon sphere.
    """
    if id not in MODEL_IDS:
        raise ModelError(f"unknown model id {id!r}")
    if profile is None:
        profile = AsymptoticProfile(delta=0.5, gamma=0.25, amplitude=0.1) if id == "radiating" \
            else AsymptoticProfile()
    C = profile.C_tau
    if id == "minkowski":
        radial = RadialCoefficients(_minkowski_coeffs, static=True)
        chart = flat_chart(C)
        params = {}
    elif id == "schwarzschild_tail":
        m = mass if mass is not None else (profile.amplitude if profile.amplitude > 0 else 1.0)
        if not m > 0:
            raise ModelError("schwarzschild_tail requires mass M > 0")
        if not (2.0 < core[0] < core[1]):
            raise ModelError("core must satisfy 2 < core[0] < core[1] (no horizon)")
        coeffs, u_radial = _schwarzschild_parts(m, core)
        radial = RadialCoefficients(coeffs, static=True)
        chart = BondiChart(u_radial, C_tau=C, blend=blend, name="t-r*")
        params = {"mass": m, "core": tuple(core)}
    elif id == "radiating":
        radial = RadialCoefficients(_radiating_parts(profile.delta, profile.amplitude, C))
        chart = flat_chart(C)
        params = {}
    else:
        if table is None:
            raise ModelError("custom-table requires a table with r, g_tt, g_tr, g_rr, g_ang")
        r_tab = np.asarray(table["r"], float)
        cols = np.array([table[k] for k in ("g_tt", "g_tr", "g_rr", "g_ang")], dtype=float)
        if r_tab[0] != 0.0 or np.any(np.diff(r_tab) <= 0):
            raise ModelError("table radii must start at 0 and increase")
        h = 0.25 * float(np.min(np.diff(r_tab)))
        prof = _tabulated_radial(r_tab, cols, h)

        def coeffs(t, r):
            v = prof(r)
            return v[..., 0], v[..., 1], v[..., 2], v[..., 3]

        radial = RadialCoefficients(coeffs, static=True)
        chart = flat_chart(C)
        params = {"table_points": int(r_tab.size)}
    if blend is not None and id != "schwarzschild_tail":
        chart = BondiChart(chart.u_radial, C_tau=C, blend=blend, name=chart.name + "+blend")
    model = MetricModel(id=id, profile=profile, chart=chart, inv_fn=radial.inv_fn,
                        radial=radial, params=params)
    _check_lorentzian(model)
    return model


def load_table(path) -> dict:
    """Read a custom-table CSV with columns r, g_tt, g_tr, g_rr, g_ang."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(row[k]) for row in rows]) for k in ("r", "g_tt", "g_tr", "g_rr", "g_ang")}


# ---------------------------------------------------------------------------
# Bondi transform

def _jacobian(grad):
    n = grad.shape[0]
    jac = np.zeros((n, 4, 4))
    jac[:, 0, :] = grad
    jac[:, 1:, 1:] = np.eye(3)
    return jac


def to_bondi(model: MetricModel, chart: BondiChart | None, point) -> np.ndarray:
    """Inverse metric in (u, x) coordinates at one or many points."""
    chart = chart or model.chart
    pts, shape = _as_points(point)
    grad = chart.grad_u(pts)
    if not np.all(np.isfinite(grad)) or np.any(np.abs(grad[:, 0]) < 1e-12):
        raise ChartError("degenerate chart")
    jac = _jacobian(grad)
    g = model.inv_metric(pts)
    out = np.einsum("nab,nbc,ndc->nad", jac, g, jac)
    return out.reshape(shape + (4, 4))


def from_bondi(g_bondi, chart: BondiChart, point) -> np.ndarray:
    """Inverse of ``to_bondi``: (u, x) components back to (t, x)."""
    pts, shape = _as_points(point)
    grad = chart.grad_u(pts)
    if np.any(np.abs(grad[:, 0]) < 1e-12):
        raise ChartError("degenerate chart")
    jinv = np.linalg.inv(_jacobian(grad))
    gb = np.asarray(g_bondi, float).reshape(-1, 4, 4)
    return np.einsum("nab,nbc,ndc->nad", jinv, gb, jinv).reshape(shape + (4, 4))


# ---------------------------------------------------------------------------
# assumption checker

@dataclass(frozen=True)
class SampleSpec:
    t_range: tuple[float, float] = (1.0, 1e4)
    r_range: tuple[float, float] = (1.0, 1e4)
    n_t: int = 25
    n_r: int = 25
    n_dirs: int = 32
    max_order: int = 2
    delta: float | None = None
    gamma: float | None = None
    max_ratio: float = 1e6
    growth_tol: float = 0.2


def sphere_points(n: int) -> np.ndarray:
    """Deterministic near-uniform directions (Fibonacci lattice)."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + 5**0.5) * k
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def multi_indices(max_order: int) -> list[tuple[int, tuple[int, ...]]]:
    """(k, J) with k + |J| <= max_order, J a sorted tuple of spatial axes."""
    out = []
    for order in range(max_order + 1):
        for k in range(order + 1):
            m = order - k
            js = [()]
            for _ in range(m):
                js = [j + (i,) for j in js for i in range(3) if not j or i >= j[-1]]
            out.extend((k, j) for j in js)
    return out


def bondi_components_fn(model: MetricModel, chart: BondiChart):
    """x -> 17-vector: [g^ij - delta (9), d g^ui + w (3), tangential g^ui (3), g^uu, d - 1]."""
    if model.radial is not None:
        def comps(x):
            t, r = x[0], safe_norm(x[1:])
            w = radial_unit(x[1:])
            a, b, c, d = model.radial.coeffs(t, r)
            u_t, u_r = jax.grad(chart.u_tr, argnums=(0, 1))(t, r)
            g_uu = a * u_t**2 + 2.0 * b * u_t * u_r + c * u_r**2
            g_r = b * u_t + c * u_r
            dsb = model.radial.dsqrt_tr(t, r) / jnp.abs(u_t)
            proj = jnp.outer(w, w)
            c1 = (c - 1.0) * proj + (d - 1.0) * (jnp.eye(3) - proj)
            c2 = (dsb * g_r + 1.0) * w
            c3 = jnp.zeros(3) * g_r
            return jnp.concatenate([c1.ravel(), c2, c3, g_uu[None], (dsb - 1.0)[None]])
        return comps

    def comps(x):
        grad = chart.grad_fn(x)
        jac = jnp.zeros((4, 4)).at[0].set(grad).at[1:, 1:].set(jnp.eye(3))
        g = jac @ model.inv_fn(x) @ jac.T
        w = radial_unit(x[1:])
        dsb = model.dsqrt_fn(x) / jnp.abs(grad[0])
        gu = g[0, 1:]
        c1 = g[1:, 1:] - jnp.eye(3)
        return jnp.concatenate([c1.ravel(), dsb * gu + w, gu - w * jnp.dot(w, gu),
                                g[0, 0][None], (dsb - 1.0)[None]])
    return comps


def bondi_frame_fields(chart: BondiChart):
    """Coordinate fields d_u and d~_i of (u, x) written in (t, x) components."""
    def e_u(x):
        g = chart.grad_fn(x)
        return jnp.zeros(4).at[0].set(1.0 / g[0])

    def e_i(i):
        def f(x):
            g = chart.grad_fn(x)
            return jnp.zeros(4).at[0].set(-g[1 + i] / g[0]).at[1 + i].set(1.0)
        return f

    return e_u, [e_i(i) for i in range(3)]


def directional(fn, vf):
    """x -> derivative of fn along the vector field vf at x."""
    def out(x):
        return jax.jvp(fn, (x,), (vf(x),))[1]
    return out


def bondi_derivatives_fn(fn, chart: BondiChart, indices):
    """Stack of d_u^k d~_x^J fn for each (k, J) in ``indices``."""
    e_u, e_x = bondi_frame_fields(chart)
    cache = {(0, ()): fn}

    def get(k, j):
        key = (k, j)
        if key not in cache:
            if k > 0:
                cache[key] = directional(get(k - 1, j), e_u)
            else:
                cache[key] = directional(get(0, j[:-1]), e_x[j[-1]])
        return cache[key]

    funcs = [get(k, j) for k, j in indices]
    return lambda x: jnp.stack([f(x) for f in funcs])


@dataclass
class AssumptionReport:
    model_id: str
    delta: float
    gamma: float
    rows: list[dict]
    grad_u_ratio: float
    det_ratio: float
    ellipticity: float
    estimated_delta: float | None
    passed: bool
    failures: list[str]

    def table(self) -> list[dict]:
        """Rows aggregated over J of equal length: class, k, |J|, max_ratio, argmax_point."""
        agg: dict[tuple, dict] = {}
        for row in self.rows:
            key = (row["class"], row["k"], row["|J|"])
            if key not in agg or row["max_ratio"] > agg[key]["max_ratio"]:
                agg[key] = {"class": row["class"], "k": row["k"], "|J|": row["|J|"],
                            "max_ratio": row["max_ratio"], "argmax_point": row["argmax_point"]}
        return [agg[k] for k in sorted(agg, key=lambda k: (CLASS_NAMES.index(k[0]), k[1], k[2]))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "k", "|J|", "max_ratio", "argmax_point"])
        for row in self.table():
            pt = " ".join(f"{v:.6g}" for v in row["argmax_point"])
            w.writerow([row["class"], row["k"], row["|J|"], f"{row['max_ratio']:.10e}", pt])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "model": self.model_id, "delta": self.delta, "gamma": self.gamma,
            "passed": self.passed, "failures": self.failures,
            "grad_u_ratio": self.grad_u_ratio, "det_ratio": self.det_ratio,
            "ellipticity": self.ellipticity, "estimated_delta": self.estimated_delta,
            "classes": {c: [r for r in self.table() if r["class"] == c] for c in CLASS_NAMES},
        }, indent=2, default=list)


def _growth_slope(r_vals, per_r):
    """Slope of log(max ratio) against log r over the outer half of the grid."""
    half = len(r_vals) // 2
    rv, pv = r_vals[half:], per_r[half:]
    keep = pv > 1e-6 * max(float(np.max(per_r)), 1e-300)
    if keep.sum() < 3:
        return 0.0
    return float(np.polyfit(np.log(rv[keep]), np.log(pv[keep]), 1)[0])


def check_assumptions(model: MetricModel, chart: BondiChart | None = None,
                      sample_spec: SampleSpec | None = None) -> AssumptionReport:
    """Sample the symbol bounds for the four component classes.

    A bound passes when its ratio is finite, below ``max_ratio``, and shows no
    power-law growth in r (log-log slope at most ``growth_tol``).
    """
    chart = chart or model.chart
    spec = sample_spec or SampleSpec()
    delta = model.profile.delta if spec.delta is None else spec.delta
    gamma = model.profile.gamma if spec.gamma is None else spec.gamma
    ts = np.geomspace(*spec.t_range, spec.n_t)
    rs = np.geomspace(*spec.r_range, spec.n_r)
    dirs = sphere_points(spec.n_dirs)
    tt, rr, dd = np.meshgrid(ts, rs, np.arange(spec.n_dirs), indexing="ij")
    pts = np.concatenate([tt[..., None], rr[..., None] * dirs[dd]], axis=-1).reshape(-1, 4)
    indices = multi_indices(spec.max_order)
    comp = bondi_components_fn(model, chart)
    deriv = _batched(bondi_derivatives_fn(comp, chart, indices))
    vals = np.concatenate([np.asarray(deriv(chunk)) for chunk in np.array_split(pts, max(1, len(pts) // 4096))])
    w = chart.weights(pts)
    failures: list[str] = []
    bad = ~np.all(np.isfinite(vals), axis=(1, 2))
    if np.any(bad):
        p = pts[np.argmax(bad)]
        failures.append(f"non-finite derivative at point {p.tolist()}")
    rows = []
    shape = (spec.n_t, spec.n_r, spec.n_dirs)
    for n, (k, j) in enumerate(indices):
        m = len(j)
        for cname in CLASS_NAMES:
            weight = w.jap_r ** (-k - m - delta) * w.tau_zero ** (CLASS_TAU0_POWER[cname] - k) \
                * w.tau ** (-gamma * k)
            mag = np.max(np.abs(vals[:, n, _CLASS_SLICES[cname]]), axis=1)
            ratio = np.where(np.isfinite(mag), mag / weight, np.inf)
            i = int(np.argmax(ratio))
            per_r = ratio.reshape(shape).max(axis=(0, 2))
            slope = _growth_slope(rs, per_r)
            rows.append({"class": cname, "k": k, "J": j, "|J|": m, "max_ratio": float(ratio[i]),
                         "argmax_point": pts[i].tolist(), "growth": slope})
            if not np.isfinite(ratio[i]) or ratio[i] > spec.max_ratio:
                failures.append(f"{cname} k={k} J={j}: ratio {ratio[i]:.3g} at {pts[i].tolist()}")
            elif slope > spec.growth_tol:
                failures.append(f"{cname} k={k} J={j}: ratio grows like r^{slope:.3f}")
    # determinant symbol bound
    det_ratio = 0.0
    for n, (k, j) in enumerate(indices):
        mag = np.abs(vals[:, n, _DET_SLICE][:, 0]) * w.jap_r ** (k + len(j)) * w.tau_zero**k
        det_ratio = max(det_ratio, float(np.max(mag / w.jap_r ** (-delta))))
    grad_ratio = _grad_u_ratio(chart, pts, delta, w)
    g = model.inv_metric(pts)
    ellip = float(np.min(np.linalg.eigvalsh(g[:, 1:, 1:])[:, 0]))
    est = _estimate_delta(rs, vals[:, 0, _CLASS_SLICES["g_ij"]], shape)
    return AssumptionReport(model.id, delta, gamma, rows, grad_ratio, det_ratio, ellip, est,
                            not failures, failures)


def _grad_u_ratio(chart: BondiChart, pts, delta, w: WeightSet, max_order: int = 2) -> float:
    t, r = pts[:, 0], np.linalg.norm(pts[:, 1:], axis=1)
    zone = (t > 1) & (r > t / 2) & (r < 2 * t)
    if not np.any(zone):
        return 0.0
    sel = pts[zone]

    def dev(x):
        g = chart.grad_fn(x)
        return jnp.concatenate([(g[0] - 1.0)[None], g[1:] + radial_unit(x[1:])])

    ratio = 0.0
    fn = dev
    rz, t0 = r[zone], w.tau_zero[zone]
    for order in range(max_order + 1):
        vals = np.asarray(_batched(fn)(sel)).reshape(len(sel), -1)
        bound = rz ** (-delta - order) * t0 ** (-order)
        ratio = max(ratio, float(np.max(np.max(np.abs(vals), axis=1) / bound)))
        fn = jax.jacfwd(fn)
    return ratio


def _estimate_delta(rs, c1, shape) -> float | None:
    mag = np.max(np.abs(c1), axis=1).reshape(shape).max(axis=(0, 2))
    half = len(rs) // 2
    if np.all(mag[half:] == 0):
        return None
    keep = mag[half:] > 0
    return float(-np.polyfit(np.log(rs[half:][keep]), np.log(mag[half:][keep]), 1)[0])


# ---------------------------------------------------------------------------
# symbol-order fitting

@dataclass(frozen=True)
class SymbolFit:
    r_power: float | None
    tau0_power: float | None
    tau_power: float | None
    residual: float
    exact_zero: bool = False


EXACT_ZERO = "exact-zero"


def region_points(region, chart: BondiChart, n_t: int = 40, n_s: int = 41,
                  t_range: tuple[float, float] = (10.0, 1e4)) -> np.ndarray:
    """Sample points along the x1 axis for a named region or explicit (t, r) arrays."""
    if isinstance(region, str):
        ts = np.geomspace(*t_range, n_t)
        if region == "wave_zone":
            ss = np.linspace(2 / 3, 3 / 2, n_s + 2)[1:-1]
        elif region == "interior":
            ss = np.geomspace(1e-3, 0.5, n_s + 1)[:-1]
        elif region == "exterior":
            ss = np.geomspace(2.0, 20.0, n_s + 1)[1:]
        else:
            raise ValueError(f"unknown region {region!r}")
        tt, sv = np.meshgrid(ts, ss, indexing="ij")
        t, r = tt.ravel(), (tt * sv).ravel()
    else:
        t, r = (np.asarray(a, float).ravel() for a in region)
    return np.stack([t, r, 0 * r, 0 * r], axis=-1)


def symbol_order_fit(field: Callable, region, weight_template: Sequence[str] = ("r", "tau0", "tau"),
                     chart: BondiChart | None = None) -> SymbolFit:
    """Least-squares fit of log|field| against log<r>, log tau_0 and log tau.

    ``field`` maps an (N, 4) array of points to N values. Exponents left out of
    ``weight_template`` are reported as 0.
    """
    chart = chart or flat_chart()
    pts = region_points(region, chart)
    vals = np.abs(np.asarray(field(pts), dtype=float)).ravel()
    if not np.all(np.isfinite(vals)):
        raise ValueError("field is not finite on the region")
    if np.all(vals == 0):
        return SymbolFit(None, None, None, 0.0, exact_zero=True)
    keep = vals > 0
    w = chart.weights(pts[keep])
    basis = {"r": np.log(w.jap_r), "tau0": np.log(w.tau_zero), "tau": np.log(w.tau)}
    names = [n for n in ("r", "tau0", "tau") if n in weight_template]
    design = np.column_stack([np.ones(keep.sum())] + [basis[n] for n in names])
    y = np.log(vals[keep])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    powers = dict(zip(names, coef[1:]))
    return SymbolFit(float(powers.get("r", 0.0)), float(powers.get("tau0", 0.0)),
                     float(powers.get("tau", 0.0)), resid)


def ellipticity_constant(model: MetricModel, pts) -> float:
    g = model.inv_metric(pts)
    return float(np.min(np.linalg.eigvalsh(g[..., 1:, 1:])[..., 0]))


def is_spherically_symmetric(model: MetricModel, n: int = 16, seed: int = 0, tol: float = 1e-10) -> bool:
    """Compare g at rotated points with the rotated g."""
    from scipy.spatial.transform import Rotation

    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(0, 50, n), rng.normal(size=(n, 3)) * 10])
    rot = Rotation.random(n, random_state=seed).as_matrix()
    rpts = pts.copy()
    rpts[:, 1:] = np.einsum("nij,nj->ni", rot, pts[:, 1:])
    big = np.zeros((n, 4, 4))
    big[:, 0, 0] = 1.0
    big[:, 1:, 1:] = rot
    g0 = np.einsum("nab,nbc,ndc->nad", big, model.inv_metric(pts), big)
    return bool(np.allclose(model.inv_metric(rpts), g0, rtol=tol, atol=tol))
