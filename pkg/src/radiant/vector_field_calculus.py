"""Vector fields of the modified Lie algebra, deformation tensors, conformal
potentials, multiplier coefficients and energy densities, evaluated pointwise.

Everything is built from jax functions of a single (t, x) point; the public
functions vectorize over leading axes of the point array. Bondi-coordinate
partials are realized as directional derivatives along the coordinate fields
d_u = u_t^{-1} d_t and d~_i = d_i - (u_i/u_t) d_t.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .metric_models import (BondiChart, MetricModel, bondi_frame_fields, jap, radial_unit,
                            safe_norm)


class ConsistencyError(RuntimeError):
    """Two evaluation routes of the same quantity disagree."""


class PolarSingularityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cutoffs

def quintic_step(s):
    """C^2 step: 0 for s <= 0, 1 for s >= 1."""
    s = jnp.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def chi_below(j: int, u):
    """chi_{<j}(u): 1 where <u> <= 2^j, 0 where <u> >= 2^{j+1}, nonincreasing in <u>."""
    return 1.0 - quintic_step(jnp.log2(jap(u)) - j)


def interior_cutoff(x):
    """Smooth cutoff equal to 1 on r < t/8 and 0 on r > t/4 (zero for t <= 0)."""
    t, r = x[0], safe_norm(x[1:])
    ratio = r / jnp.where(t > 0, t, 1.0)
    return jnp.where(t > 0, 1.0 - quintic_step(8.0 * ratio - 1.0), 0.0)


# ---------------------------------------------------------------------------
# vector fields

@dataclass(frozen=True, eq=False)
class VectorFieldSpec:
    """A vector field given by components in Bondi (u, x) or in (t, x) form.

    ``fn(x, u)`` receives the (t, x) point and the value of u there.
    """

    id: str
    fn: Callable
    basis: str = "bondi"

    def bondi_fn(self, chart: BondiChart):
        def comps(x):
            u = chart.u_fn(x)
            v = self.fn(x, u)
            if self.basis == "bondi":
                return v
            g = chart.grad_fn(x)
            return jnp.concatenate([jnp.dot(g, v)[None], v[1:]])
        return comps

    def tx_fn(self, chart: BondiChart):
        def comps(x):
            u = chart.u_fn(x)
            v = self.fn(x, u)
            if self.basis == "tx":
                return v
            g = chart.grad_fn(x)
            xt = (v[0] - jnp.dot(v[1:], g[1:])) / g[0]
            return jnp.concatenate([xt[None], v[1:]])
        return comps


def _tau_minus(u):
    return jap(u)


@lru_cache(maxsize=None)
def vector_field(id: str, i: int = 0, j: int = 1, index: int = 0, C_tau: float = 10.0) -> VectorFieldSpec:
    """Named fields: T, S, Omega (i<j), K0, Yj, Xj (index = j)."""
    if id == "T":
        return VectorFieldSpec("T", lambda x, u: jnp.zeros(4).at[0].set(1.0))
    if id == "S":
        return VectorFieldSpec("S", lambda x, u: jnp.concatenate([u[None], x[1:]]))
    if id == "Omega":
        if not 0 <= i < j <= 2:
            raise ValueError("Omega_ij requires 0 <= i < j <= 2 (spatial axes)")
        def rot(x, u):
            v = jnp.zeros(4)
            return v.at[1 + j].add(x[1 + i]).at[1 + i].add(-x[1 + j])
        return VectorFieldSpec(f"Omega_{i + 1}{j + 1}", rot)

    def k0(x, u):
        r = safe_norm(x[1:])
        return jnp.concatenate([(_tau_minus(u) ** 2)[None], 2.0 * (u + r) * x[1:]])

    if id == "K0":
        return VectorFieldSpec("K0", k0)
    if id == "Yj":
        return VectorFieldSpec(f"Y_{index}", lambda x, u: jnp.zeros(4).at[0].set(1.0 + chi_below(index, u)))
    if id == "Xj":
        return VectorFieldSpec(f"X_{index}", lambda x, u: (1.0 + chi_below(index, u)) * k0(x, u))
    raise ValueError(f"unknown vector field {id!r}")


def custom_field(fn: Callable, basis: str = "tx", id: str = "custom") -> VectorFieldSpec:
    """Wrap ``fn(x) -> components`` as a field in the given basis."""
    return VectorFieldSpec(id, lambda x, u: fn(x), basis=basis)


def minkowski_conformal_killing() -> VectorFieldSpec:
    """K = (t^2 + r^2) d_t + 2 t r d_r in (t, x) components."""
    def fn(x):
        t = x[0]
        r2 = jnp.sum(x[1:] ** 2)
        return jnp.concatenate([(t * t + r2)[None], 2.0 * t * x[1:]])
    return custom_field(fn, "tx", "K_mink")


# ---------------------------------------------------------------------------
# conformal weights

def omega_fn(omega, chart: BondiChart) -> Callable:
    """Omega as a jax function of the point: '1', 'I' (<r>), 'II' (tau_- tau_+) or a callable."""
    if callable(omega):
        return omega
    if omega in ("1", 1, None):
        return lambda x: jnp.ones_like(x[0])
    if omega == "I":
        return lambda x: jap(safe_norm(x[1:]))
    if omega == "II":
        def two(x):
            _, tm, tp, _, _ = chart.weight_fns(x)
            return tm * tp
        return two
    raise ValueError(f"unknown conformal weight {omega!r}")


# ---------------------------------------------------------------------------
# pointwise kernels (single point, jax)

def _jvp(fn, x, v):
    return jax.jvp(fn, (x,), (v,))[1]


def _bondi_grad(fn, chart):
    """x -> array of Bondi partials of fn, partial index last."""
    e_u, e_x = bondi_frame_fields(chart)
    fields = [e_u] + e_x

    def out(x):
        return jnp.stack([_jvp(fn, x, e(x)) for e in fields], axis=-1)
    return out


def _bondi_jac(chart, x):
    g = chart.grad_fn(x)
    return jnp.zeros((4, 4)).at[0].set(g).at[1:, 1:].set(jnp.eye(3))


def _box(model: MetricModel, f):
    """Wave operator in (t, x) coordinates applied to a scalar function."""
    def flux(x):
        return model.dsqrt_fn(x) * model.inv_fn(x) @ jax.grad(f)(x)

    def box(x):
        return jnp.trace(jax.jacfwd(flux)(x)) / model.dsqrt_fn(x)
    return box


class _Kernels:
    """Closures for one (model, chart) pair."""

    def __init__(self, model: MetricModel, chart: BondiChart):
        self.model = model
        self.chart = chart

    def g(self, x):
        return self.model.inv_fn(x)

    def dsb(self, x):
        return self.model.dsqrt_fn(x) / jnp.abs(self.chart.grad_fn(x)[0])

    def g_bondi(self, x):
        jac = _bondi_jac(self.chart, x)
        return jac @ self.g(x) @ jac.T

    def h_bondi(self, x):
        return self.dsb(x) * self.g_bondi(x)

    def eta_bondi(self, x):
        w = radial_unit(x[1:])
        top = jnp.concatenate([jnp.zeros(1), -w])
        return jnp.vstack([top[None], jnp.column_stack([-w, jnp.eye(3)])])

    def q_bondi(self, x):
        return self.h_bondi(x) - self.eta_bondi(x)

    def pi(self, X):
        xf = X.tx_fn(self.chart)

        def out(x):
            v = xf(x)
            dx = jax.jacfwd(xf)(x)  # dx[b, c] = d_c X^b
            g = self.g(x)
            return -_jvp(self.g, x, v) + g @ dx.T + dx @ g.T
        return out

    def pi_hat_def(self, X):
        pi = self.pi(X)

        def out(x):
            p = pi(x)
            g = self.g(x)
            tr = jnp.sum(jnp.linalg.inv(g) * p)
            return p - 0.5 * g * tr
        return out

    def pi_hat_formula(self, X):
        xf = X.tx_fn(self.chart)
        dg = lambda y: self.model.dsqrt_fn(y) * self.g(y)

        def out(x):
            v = xf(x)
            dx = jax.jacfwd(xf)(x)
            g = self.g(x)
            return -_jvp(dg, x, v) / self.model.dsqrt_fn(x) - g * jnp.trace(dx) + g @ dx.T + dx @ g.T
        return out

    def lie_bondi(self, X, tensor):
        """L_X of a contravariant 2-tensor field, all in Bondi components."""
        xb = X.bondi_fn(self.chart)
        dq = _bondi_grad(tensor, self.chart)
        dxb = _bondi_grad(xb, self.chart)

        def out(x):
            q = tensor(x)
            d = dxb(x)  # d[a, c] = d_c X^a
            return dq(x) @ xb(x) - d @ q - q @ d.T
        return out

    def bondi_div(self, X):
        dxb = _bondi_grad(X.bondi_fn(self.chart), self.chart)
        return lambda x: jnp.trace(dxb(x))

    def x_log_omega(self, X, omega):
        xf = X.tx_fn(self.chart)
        om = omega_fn(omega, self.chart)
        return lambda x: _jvp(lambda y: jnp.log(om(y)), x, xf(x))

    def remainder(self, X, omega, polar_terms: bool = True):
        """R_X; with polar_terms False the bracket drops 2 X^r/r - 2 X ln Omega."""
        lq = self.lie_bondi(X, self.q_bondi)
        div = self.bondi_div(X)
        xln = self.x_log_omega(X, omega)
        xb = X.bondi_fn(self.chart)

        def out(x):
            w = radial_unit(x[1:])
            r = safe_norm(x[1:])
            bracket = div(x) - 2.0 * xln(x)
            if not polar_terms:
                bracket = div(x) - 2.0 * jnp.dot(w, xb(x)[1:]) / r
            return -(lq(x) + bracket * self.q_bondi(x)) / self.dsb(x)
        return out

    def main_term(self, X, omega):
        le = self.lie_bondi(X, self.eta_bondi)
        div = self.bondi_div(X)
        xln = self.x_log_omega(X, omega)
        return lambda x: -(le(x) + (div(x) - 2.0 * xln(x)) * self.eta_bondi(x)) / self.dsb(x)

    def potential(self, omega):
        om = omega_fn(omega, self.chart)
        inv = lambda y: 1.0 / om(y)
        box = _box(self.model, inv)
        return lambda x: om(x) ** 3 * box(x)

    def potential_split(self, omega):
        om = omega_fn(omega, self.chart)
        inv = lambda y: 1.0 / om(y)
        dinv = _bondi_grad(inv, self.chart)

        def part(tensor):
            flux = lambda y: tensor(y) @ dinv(y)
            dflux = _bondi_grad(flux, self.chart)
            return lambda x: om(x) ** 3 * jnp.trace(dflux(x)) / self.dsb(x)
        return part(self.eta_bondi), part(self.q_bondi)

    def bondi_divergence_form(self, tensor, f):
        """d^{-1/2} d~_a (d^{1/2} M^{ab} d~_b f) in Bondi coordinates."""
        df = _bondi_grad(f, self.chart)
        flux = lambda y: self.dsb(y) * tensor(y) @ df(y)
        dflux = _bondi_grad(flux, self.chart)
        return lambda x: jnp.trace(dflux(x)) / self.dsb(x)

    def tx_divergence_form(self, tensor, f):
        flux = lambda y: self.model.dsqrt_fn(y) * tensor(y) @ jax.grad(f)(y)
        return lambda x: jnp.trace(jax.jacfwd(flux)(x)) / self.model.dsqrt_fn(x)


@lru_cache(maxsize=64)
def _kernels(model: MetricModel, chart: BondiChart) -> _Kernels:
    return _Kernels(model, chart)


_JIT_CACHE: dict = {}


def _vectorized(key, builder):
    """Jit+vmap a kernel once per key and apply it to points with leading axes."""
    fn = _JIT_CACHE.get(key)
    if fn is None:
        fn = jax.jit(jax.vmap(builder()))
        _JIT_CACHE[key] = fn

    def apply(points):
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 4)
        out = np.asarray(fn(flat))
        return out.reshape(pts.shape[:-1] + out.shape[1:])
    return apply


# ---------------------------------------------------------------------------
# public operations

@dataclass(frozen=True)
class Tensor2Up:
    components: np.ndarray  # (..., 4, 4)
    chart: str  # "tx" or "bondi"

    def __post_init__(self):
        if self.chart not in ("tx", "bondi"):
            raise ValueError("chart must be 'tx' or 'bondi'")

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        c = self.components
        return bool(np.allclose(c, np.swapaxes(c, -1, -2), rtol=tol, atol=tol))


def _to_chart(model, chart, comps, points, which: str) -> Tensor2Up:
    if which == "tx":
        return Tensor2Up(comps, "tx")
    if which != "bondi":
        raise ValueError("chart must be 'tx' or 'bondi'")
    grad = chart.grad_u(points)
    jac = np.zeros(grad.shape[:-1] + (4, 4))
    jac[..., 0, :] = grad
    jac[..., 1:, 1:] = np.eye(3)
    return Tensor2Up(np.einsum("...ab,...bc,...dc->...ad", jac, comps, jac), "bondi")


def deformation_pi(model: MetricModel, X: VectorFieldSpec, point, chart: str = "tx") -> Tensor2Up:
    """pi^{ab} = -X(g^{ab}) + g^{ac} d_c X^b + g^{bc} d_c X^a."""
    ch = model.chart
    k = _kernels(model, ch)
    comps = _vectorized(("pi", model, ch, X), lambda: k.pi(X))(point)
    return _to_chart(model, ch, comps, point, chart)


def pi_hat(model: MetricModel, X: VectorFieldSpec, point, chart: str = "tx", tol: float = 1e-8) -> Tensor2Up:
    """Normalized deformation tensor; definition and closed formula must agree."""
    ch = model.chart
    k = _kernels(model, ch)
    a = _vectorized(("pihat_def", model, ch, X), lambda: k.pi_hat_def(X))(point)
    b = _vectorized(("pihat_formula", model, ch, X), lambda: k.pi_hat_formula(X))(point)
    scale = max(1.0, float(np.max(np.abs(a))))
    if not np.allclose(a, b, rtol=0, atol=tol * scale):
        raise ConsistencyError(f"pi_hat routes differ by {np.max(np.abs(a - b)):.3e}")
    return _to_chart(model, ch, a, point, chart)


def _check_off_axis(point):
    r = np.linalg.norm(np.asarray(point, float)[..., 1:], axis=-1)
    if np.any(r == 0):
        raise PolarSingularityError("polar singularity: remainder evaluated on the axis r = 0")


def remainder_tensor(model: MetricModel, X: VectorFieldSpec, omega="1", point=None,
                     verify: bool = True, tol: float = 1e-8) -> Tensor2Up:
    """Remainder R_X in Bondi components; optionally checks the split of 2A."""
    _check_off_axis(point)
    ch = model.chart
    k = _kernels(model, ch)
    okey = omega if isinstance(omega, str) else id(omega)
    rem = _vectorized(("rem", model, ch, X, okey), lambda: k.remainder(X, omega))(point)
    if verify:
        main = _vectorized(("main", model, ch, X, okey), lambda: k.main_term(X, omega))(point)
        two_a = 2.0 * multiplier_coeffs(model, X, omega, 0.0, point, chart="bondi").A.components
        scale = max(1.0, float(np.max(np.abs(two_a))))
        err = float(np.max(np.abs(two_a - main - rem)))
        if err > tol * scale:
            raise ConsistencyError(f"2A differs from main term + remainder by {err:.3e}")
    return Tensor2Up(rem, "bondi")


def commutator_remainder(model: MetricModel, X: VectorFieldSpec, point) -> Tensor2Up:
    """R_X of the commutator formulas: -d^{-1/2}(L_X Q + (div X - 2X^r/r) Q), Q = d^{1/2}g^{-1} - eta^{-1}."""
    _check_off_axis(point)
    ch = model.chart
    k = _kernels(model, ch)
    rem = _vectorized(("crem", model, ch, X), lambda: k.remainder(X, "1", polar_terms=False))(point)
    return Tensor2Up(rem, "bondi")


def lie_derivative(model: MetricModel, X: VectorFieldSpec, tensor: str, point) -> Tensor2Up:
    """L_X of a named contravariant tensor field in Bondi components.

    ``tensor``: 'Q' (d^{1/2} g^{-1} - eta^{-1}), 'H' (d^{1/2} g^{-1}) or 'eta'.
    """
    ch = model.chart
    k = _kernels(model, ch)
    fields = {"Q": k.q_bondi, "H": k.h_bondi, "eta": k.eta_bondi}
    out = _vectorized(("lie", model, ch, X, tensor), lambda: k.lie_bondi(X, fields[tensor]))(point)
    return Tensor2Up(out, "bondi")


def conformal_potential(model: MetricModel, omega, point, verify: bool = True, tol: float = 1e-7,
                        atol: float = 1e-10):
    """V = Omega^3 box_g Omega^{-1}, with the flat/remainder split as a cross-check off the axis."""
    ch = model.chart
    k = _kernels(model, ch)
    okey = omega if isinstance(omega, str) else id(omega)
    v = _vectorized(("V", model, ch, okey), lambda: k.potential(omega))(point)
    if verify:
        pts = np.asarray(point, float)
        off = np.linalg.norm(pts[..., 1:], axis=-1) > 0
        if np.any(off):
            flat_fn, rem_fn = k.potential_split(omega)
            flat = _vectorized(("Vflat", model, ch, okey), lambda: flat_fn)(pts[off])
            rem = _vectorized(("Vrem", model, ch, okey), lambda: rem_fn)(pts[off])
            ref = v[off]
            scale = np.abs(ref) + np.abs(flat) + np.abs(rem) + atol / tol
            if np.max(np.abs(flat + rem - ref) / scale) > tol:
                raise ConsistencyError("conformal potential routes disagree")
    return v


def potential_parts(model: MetricModel, omega, point) -> tuple[np.ndarray, np.ndarray]:
    """(flat part, remainder part) of V computed in Bondi coordinates (r > 0)."""
    _check_off_axis(point)
    ch = model.chart
    k = _kernels(model, ch)
    okey = omega if isinstance(omega, str) else id(omega)
    flat_fn, rem_fn = k.potential_split(omega)
    return (_vectorized(("Vflat", model, ch, okey), lambda: flat_fn)(point),
            _vectorized(("Vrem", model, ch, okey), lambda: rem_fn)(point))


@dataclass(frozen=True)
class MultiplierCoefficients:
    A: Tensor2Up
    B_chi: np.ndarray
    C_chi: np.ndarray
    V: np.ndarray
    chi: np.ndarray


def _chi_fn(chi):
    if callable(chi):
        return chi
    c = float(chi)
    return lambda x: c + 0.0 * x[0]


def multiplier_coeffs(model: MetricModel, X: VectorFieldSpec, omega, chi, point,
                      chart: str = "tx") -> MultiplierCoefficients:
    """A = (pi_hat + 2 X ln(Omega) g^{-1})/2, B and C of the conformal multiplier identity.

    ``chi`` is a constant or a jax function of the point.
    """
    ch = model.chart
    k = _kernels(model, ch)
    cf = _chi_fn(chi)
    okey = omega if isinstance(omega, str) else id(omega)
    ckey = chi if not callable(chi) else id(chi)

    def build():
        ph = k.pi_hat_formula(X)
        xln = k.x_log_omega(X, omega)
        pot = k.potential(omega)
        om = omega_fn(omega, ch)
        xf = X.tx_fn(ch)
        chiv = lambda y: cf(y) * pot(y)

        def out(x):
            g = k.g(x)
            a = 0.5 * (ph(x) + 2.0 * xln(x) * g)
            tr = jnp.sum(jnp.linalg.inv(g) * a)
            v = pot(x)
            c = cf(x)
            o2 = om(x) ** 2
            b = (_jvp(chiv, x, xf(x)) - tr * c * v) / (2.0 * o2)
            cc = (c - 1.0) * v / o2
            flat = jnp.concatenate([a.ravel(), jnp.stack([b, cc, v, c])])
            return flat
        return out

    vals = _vectorized(("mult", model, ch, X, okey, ckey), build)(point)
    a = vals[..., :16].reshape(vals.shape[:-1] + (4, 4))
    tensor = _to_chart(model, ch, a, point, chart)
    return MultiplierCoefficients(tensor, vals[..., 16], vals[..., 17], vals[..., 18], vals[..., 19])


def unit_normal(model: MetricModel, point) -> np.ndarray:
    """N^a = -g^{ab} d_b t / sqrt(-g^{tt}); hard error if dt is not timelike."""
    g = model.inv_metric(point)
    gtt = g[..., 0, 0]
    if np.any(gtt >= 0):
        raise ValueError("t = const is not spacelike: unit normal is not timelike")
    return -g[..., :, 0] / np.sqrt(-gtt)[..., None]


@dataclass(frozen=True)
class EnergyDensity:
    T: np.ndarray  # covariant (..., 4, 4)
    density: np.ndarray  # P_a N^a
    flux_density: np.ndarray  # P_a N^a Omega^{-2} sqrt(-g^{tt}) d^{1/2}


def em_tensor(model: MetricModel, point, grad, X: VectorFieldSpec, omega="1", chi=0.0,
              psi=None) -> EnergyDensity:
    """Energy-momentum tensor of (psi, chi) and its density along X through t = const.

    With ``omega`` = '1' and chi = 0 this is the classical T_ab of phi, and
    ``grad`` is d phi. Otherwise ``grad`` is d psi with psi = Omega phi and the
    metric is Omega^{-2} g; ``psi`` is needed for the chi V psi^2 term.
    """
    pts = np.asarray(point, float)
    grad = np.asarray(grad, float)
    ch = model.chart
    g_inv = model.inv_metric(pts)
    g_cov = np.linalg.inv(g_inv)
    om = _vectorized(("omega", ch, omega if isinstance(omega, str) else id(omega)),
                     lambda: omega_fn(omega, ch))(pts)
    gt_cov = g_cov / om[..., None, None] ** 2
    gt_inv = g_inv * om[..., None, None] ** 2
    kin = np.einsum("...ab,...a,...b->...", gt_inv, grad, grad)
    pot = 0.0
    chi_val = _vectorized(("chi", id(chi) if callable(chi) else chi), lambda: _chi_fn(chi))(pts)
    if np.any(chi_val != 0):
        if psi is None:
            raise ValueError("psi is required when chi is nonzero")
        v = conformal_potential(model, omega, pts, verify=False)
        pot = chi_val * v * np.asarray(psi, float) ** 2
    T = np.einsum("...a,...b->...ab", grad, grad) - 0.5 * gt_cov * (kin - pot)[..., None, None]
    xv = _vectorized(("xtx", ch, X), lambda: X.tx_fn(ch))(pts)
    n = unit_normal(model, pts)
    dens = np.einsum("...ab,...a,...b->...", T, n, xv)
    lapse = np.sqrt(-g_inv[..., 0, 0])
    flux = dens / om**2 * lapse * model.det_sqrt(pts)
    return EnergyDensity(T, dens, flux)


@dataclass(frozen=True)
class CommutatorValue:
    direct: np.ndarray
    formula: np.ndarray
    box: np.ndarray


def commutator_apply(model: MetricModel, X: VectorFieldSpec, phi: Callable, point,
                     rtol: float = 1e-8) -> CommutatorValue:
    """[box_g, X] phi computed directly and from the commutator formula.

    For T, S and the rotations the Bondi-coordinate forms with the remainder
    R_X are used; other fields use D_a pi_hat^{ab} D_b + (D_c X^c) box.
    """
    ch = model.chart
    k = _kernels(model, ch)
    pts = np.asarray(point, float)
    kind = X.id.split("_")[0]

    def build_direct():
        xf = X.tx_fn(ch)
        xphi = lambda y: jnp.dot(jax.grad(phi)(y), xf(y))
        box_phi = _box(model, phi)
        box_xphi = _box(model, xphi)
        return lambda x: jnp.stack([box_xphi(x) - jnp.dot(jax.grad(box_phi)(x), xf(x)), box_phi(x)])

    def build_formula():
        box_phi = _box(model, phi)
        xf = X.tx_fn(ch)
        log_d = lambda y: 2.0 * jnp.log(k.dsb(y))
        if kind in ("T", "S", "Omega"):
            rem = k.remainder(X, "1", polar_terms=False)
            term = k.bondi_divergence_form(rem, phi)
            shift = 4.0 if kind == "S" else 0.0
            return lambda x: term(x) + 0.5 * (shift + _jvp(log_d, x, xf(x))) * box_phi(x)
        ph = k.pi_hat_formula(X)
        term = k.tx_divergence_form(ph, phi)
        dens = lambda y: model.dsqrt_fn(y) * xf(y)
        div = lambda x: jnp.trace(jax.jacfwd(dens)(x)) / model.dsqrt_fn(x)
        return lambda x: term(x) + div(x) * box_phi(x)

    pkey = id(phi)
    if kind in ("T", "S", "Omega"):
        _check_off_axis(pts)
    d = _vectorized(("comm_direct", model, ch, X, pkey), build_direct)(pts)
    f = _vectorized(("comm_formula", model, ch, X, pkey), build_formula)(pts)
    direct, box = d[..., 0], d[..., 1]
    scale = np.maximum(1.0, np.abs(direct) + np.abs(box))
    if np.any(np.abs(direct - f) > rtol * scale):
        raise ConsistencyError(f"commutator routes differ by {np.max(np.abs(direct - f)):.3e}")
    return CommutatorValue(direct, f, box)


def lie_bracket(X: VectorFieldSpec, Y: VectorFieldSpec, chart: BondiChart) -> Callable:
    """(t, x) components of [X, Y] as a vectorized numpy function of points."""
    xf, yf = X.tx_fn(chart), Y.tx_fn(chart)

    def br(x):
        return jax.jacfwd(yf)(x) @ xf(x) - jax.jacfwd(xf)(x) @ yf(x)
    return _vectorized(("bracket", chart, X, Y), lambda: br)


def field_components(X: VectorFieldSpec, chart: BondiChart, point, basis: str = "tx") -> np.ndarray:
    fn = X.tx_fn(chart) if basis == "tx" else X.bondi_fn(chart)
    return _vectorized(("comps", chart, X, basis), lambda: fn)(point)


def box_fn(model: MetricModel, f: Callable) -> Callable:
    """box_g f as a single-point jax function (for composing with other kernels)."""
    return _box(model, f)


def box_apply(model: MetricModel, phi: Callable, point) -> np.ndarray:
    return _vectorized(("box", model, id(phi)), lambda: _box(model, phi))(point)


def main_term(model: MetricModel, X: VectorFieldSpec, omega, point) -> Tensor2Up:
    """Flat part -d^{-1/2}(L_X eta^{-1} + (div X - 2 X ln Omega) eta^{-1}) in Bondi components."""
    _check_off_axis(point)
    ch = model.chart
    k = _kernels(model, ch)
    okey = omega if isinstance(omega, str) else id(omega)
    return Tensor2Up(_vectorized(("main", model, ch, X, okey), lambda: k.main_term(X, omega))(point), "bondi")
