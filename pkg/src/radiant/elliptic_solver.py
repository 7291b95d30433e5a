"""Radial realization of the weighted elliptic estimate for P = d_i h^{ij} d_j.

For h^{ij} = h_r w^i w^j + h_t (delta^{ij} - w^i w^j) and phi = phi_l(r) Y_l,
P(phi Y) = (r^{-2} (r^2 h_r phi')' - h_t l(l+1) phi / r^2) Y. Both P and the flat
Laplacian use the same conservative three-point stencil on nodes r_j = j h,
with regularity at r = 0 and the exact multipole decay r^{-(l+1)} imposed
through a ghost node at r_max.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .metric_models import MetricModel, jap


class EllipticError(ValueError):
    pass


@dataclass(frozen=True)
class RadialEllipticProblem:
    l: int
    r: np.ndarray
    h_r: np.ndarray
    h_t: np.ndarray
    F: np.ndarray
    a: float = 0.5

    def __post_init__(self):
        if np.min(np.minimum(self.h_r, self.h_t)) <= 0:
            raise EllipticError("coefficients are not uniformly elliptic")
        if self.r[0] != 0.0:
            raise EllipticError("grid must start at r = 0")

    @property
    def ellipticity(self) -> float:
        return float(np.min(np.minimum(self.h_r, self.h_t)))

    def decay_constant(self, delta: float) -> float:
        """Smallest K with |h - delta| <= K <r>^{-delta} on the grid."""
        dev = np.maximum(np.abs(self.h_r - 1.0), np.abs(self.h_t - 1.0))
        return float(np.max(dev * jap(self.r) ** delta))


def _half(v):
    return 0.5 * (v[1:] + v[:-1])


def _operator(l: int, r: np.ndarray, h_r: np.ndarray, h_t: np.ndarray):
    """Banded (lower, diag, upper) arrays of the discrete operator on unknowns phi_j."""
    n = r.size
    h = r[1] - r[0]
    rh = _half(r)
    hh = _half(h_r)
    flux = rh**2 * hh / h**2  # links j+1/2, j = 0..n-2
    lower = np.zeros(n)
    upper = np.zeros(n)
    diag = np.zeros(n)
    rs = np.where(r > 0, r, 1.0)
    vol = rs**2 + h * h / 12.0  # (r_{j+1/2}^3 - r_{j-1/2}^3) / (3 h): exact on quadratics at j = 1
    j = np.arange(1, n - 1)
    lower[j] = flux[j - 1] / vol[j]
    upper[j] = flux[j] / vol[j]
    diag[j] = -(flux[j - 1] + flux[j]) / vol[j] - h_t[j] * l * (l + 1) / vol[j]
    # outer node with ghost value phi_{n} = phi_{n-1} (r_{n-1}/(r_{n-1}+h))^{l+1}
    k = n - 1
    rg = r[k] + h
    decay = (r[k] / rg) ** (l + 1)
    flux_out = (r[k] + 0.5 * h) ** 2 * h_r[k] / h**2
    lower[k] = flux[k - 1] / vol[k]
    diag[k] = (-(flux[k - 1] + flux_out) + flux_out * decay) / vol[k] - h_t[k] * l * (l + 1) / vol[k]
    # axis node
    if l == 0:
        diag[0] = -6.0 * h_r[0] / h**2
        upper[0] = 6.0 * h_r[0] / h**2
    else:
        diag[0] = 1.0  # phi_0 = 0
    return lower, diag, upper


def _apply(ops, phi, l):
    lower, diag, upper = ops
    out = diag * phi
    out[1:] += lower[1:] * phi[:-1]
    out[:-1] += upper[:-1] * phi[1:]
    if l > 0:
        out[0] = 0.0
    return out


def _solve(ops, rhs, l):
    lower, diag, upper = ops
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    rhs = np.array(rhs, float)
    if l > 0:
        rhs[0] = 0.0
    return solve_banded((1, 1), ab, rhs)


def laplacian_l(l: int, phi, r) -> np.ndarray:
    """Discrete flat Delta_l (same stencil and closure as the inverse)."""
    one = np.ones_like(r)
    return _apply(_operator(l, r, one, one), np.asarray(phi, float), l)


def apply_P(problem: RadialEllipticProblem, phi) -> np.ndarray:
    return _apply(_operator(problem.l, problem.r, problem.h_r, problem.h_t), np.asarray(phi, float), problem.l)


def _check_decay(F, r):
    w = np.abs(F) * jap(r) ** 2
    if not np.any(w):
        return
    half = r > 0.5 * r[-1]
    if w[half].max() > w[~half].max():
        raise EllipticError("ill-posed exterior boundary: source does not decay faster than r^-2")


def poisson_inverse(l: int, F, r, check: bool = True) -> np.ndarray:
    """phi_l with discrete Delta_l phi_l = F_l, regular at 0 and decaying like r^{-(l+1)}."""
    F = np.asarray(F, float)
    r = np.asarray(r, float)
    if check:
        _check_decay(F, r)
    one = np.ones_like(r)
    ops = _operator(l, r, one, one)
    phi = _solve(ops, F, l)
    scale = max(np.linalg.norm(F), 1e-300)
    res = np.linalg.norm(_apply(ops, phi, l) - (F if l == 0 else np.concatenate([[0.0], F[1:]]))) / scale
    if res > 1e-10:
        raise EllipticError(f"flat solve residual {res:.2e} exceeds 1e-10")
    return phi


def weighted_l2(f, r, a: float) -> float:
    return float(np.sqrt(np.trapezoid(jap(r) ** (2 * a) * np.asarray(f) ** 2 * r**2, r)))


@dataclass
class NeumannResult:
    phi: np.ndarray
    residuals: list[float]
    ratios: list[float]
    verdict: str  # converged | Neumann divergence
    exact_residual: float = field(default=float("nan"))  # ||P(phi~ - phi) - R^{k+1} F|| / ||F||


def neumann_solve(problem: RadialEllipticProblem, k_terms: int = 10) -> NeumannResult:
    """phi~ = Delta^{-1} sum_{i<=k} R^i F with R = I - P Delta^{-1}; residual_i = ||R^i F||_{<r>^a L^2}."""
    if k_terms < 1:
        raise ValueError("k_terms must be >= 1")
    p, r, l = problem, problem.r, problem.l
    ops_p = _operator(l, r, p.h_r, p.h_t)
    term = np.array(p.F, float)
    if l > 0:
        term[0] = 0.0
    acc = np.zeros_like(term)
    residuals = [weighted_l2(term, r, p.a)]
    growth = 0
    verdict = "converged"
    for i in range(k_terms + 1):
        acc += term
        lap_inv = poisson_inverse(l, term, r, check=(i == 0))
        term = term - _apply(ops_p, lap_inv, l)
        residuals.append(weighted_l2(term, r, p.a))
        if residuals[-1] > residuals[-2] * (1 + 1e-12) and residuals[-2] > 1e-300:
            growth += 1
            if growth >= 3:
                verdict = "Neumann divergence"
        else:
            growth = 0
    phi_tilde = poisson_inverse(l, acc, r, check=False)
    # P(phi~ - phi) = -R^{k+1} F, with phi = P^{-1} F
    target = np.array(p.F, float)
    if l > 0:
        target[0] = 0.0
    phi_exact = _solve(ops_p, target, l)
    lhs = _apply(ops_p, phi_tilde - phi_exact, l)
    scale = max(np.linalg.norm(target), 1e-300)
    exact = float(np.linalg.norm(lhs + term) / scale)
    ratios = [residuals[i + 1] / residuals[i] if residuals[i] > 0 else 0.0 for i in range(len(residuals) - 1)]
    return NeumannResult(phi_tilde, residuals, ratios, verdict, exact)


# ---------------------------------------------------------------------------
# problem constructors

def radial_grid(r_max: float, h: float) -> np.ndarray:
    n = int(round(r_max / h)) + 1
    return np.linspace(0.0, r_max, n)


def coefficients_from_model(model: MetricModel, t: float, r) -> tuple[np.ndarray, np.ndarray]:
    """h_r, h_t of h^{ij} = d^{1/2} g^{ij} at fixed t."""
    r = np.asarray(r, float)
    _, _, c, d = model.radial_coeffs(np.full_like(r, t), r)
    pts = np.column_stack([np.full_like(r, t), r, np.zeros_like(r), np.zeros_like(r)])
    ds = model.det_sqrt(pts)
    return ds * c, ds * d


def gaussian_source(r, l: int, center: float = 3.0, width: float = 1.0) -> np.ndarray:
    return (r / max(center, 1.0)) ** l * np.exp(-((r - center) / width) ** 2)


def model_problem(model: MetricModel, t: float, l: int, r, a: float = 0.5, F=None) -> RadialEllipticProblem:
    h_r, h_t = coefficients_from_model(model, t, r)
    F = gaussian_source(r, l) if F is None else np.asarray(F, float)
    return RadialEllipticProblem(l, np.asarray(r, float), h_r, h_t, F, a)


def bump_problem(amplitude: float, l: int, r, a: float = 0.5, delta: float = 1.0, F=None) -> RadialEllipticProblem:
    """h_r = h_t = 1 + amplitude <r>^{-delta}: a positive deviation of adjustable size."""
    r = np.asarray(r, float)
    h = 1.0 + amplitude * jap(r) ** (-delta)
    F = gaussian_source(r, l) if F is None else np.asarray(F, float)
    return RadialEllipticProblem(l, r, h, h.copy(), F, a)


# ---------------------------------------------------------------------------
# weighted estimate

def second_derivative_density(phi, r, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Sphere averages of |Hess(phi Y)|^2 and |grad(phi Y)|^2 for a unit-normalized harmonic."""
    lam = l * (l + 1)
    d1 = np.gradient(phi, r, edge_order=2)
    d2 = np.gradient(d1, r, edge_order=2)
    rs = np.where(r > 0, r, 1.0)
    ang, rad = phi / rs**2, d1 / rs
    hess = d2**2 + 2 * lam * (rad - ang) ** 2 + (lam * lam - lam) * ang**2 - 2 * lam * ang * rad + 2 * rad**2
    grad = d1**2 + lam * (phi / rs) ** 2
    if l == 0:
        hess[0] = 3 * d2[0] ** 2
    return hess, grad


def elliptic_ratio(problem: RadialEllipticProblem, phi, a: float | None = None) -> float:
    """||<r>^a (grad^2 phi, <r>^{-1} grad phi)|| / ||<r>^a P phi||."""
    a = problem.a if a is None else a
    r = problem.r
    hess, grad = second_derivative_density(np.asarray(phi, float), r, problem.l)
    lhs = np.sqrt(np.trapezoid(jap(r) ** (2 * a) * hess * r**2, r)) \
        + np.sqrt(np.trapezoid(jap(r) ** (2 * a - 2) * grad * r**2, r))
    p = apply_P(problem, phi)
    # drop the closure row: it encodes the exterior condition, not P phi
    rhs = weighted_l2(p[:-1], r[:-1], a)
    if rhs == 0:
        if lhs == 0:
            return 0.0
        raise EllipticError("P phi = 0 with nonzero phi")
    return float(lhs / rhs)


@dataclass(frozen=True)
class EnsembleSpec:
    count: int = 64
    seed: int = 42
    modes: tuple[int, ...] = (0, 1, 2)
    r_max: float = 60.0
    h: float = 0.02


def bump_ensemble(spec: EnsembleSpec) -> list[tuple[int, np.ndarray]]:
    """Random radial bumps r^l (sum of Gaussians) with varying centers and widths."""
    rng = np.random.default_rng(spec.seed)
    r = radial_grid(spec.r_max, spec.h)
    out = []
    for k in range(spec.count):
        l = spec.modes[k % len(spec.modes)]
        phi = np.zeros_like(r)
        for _ in range(rng.integers(1, 4)):
            c = rng.uniform(0.0, spec.r_max / 4)
            w = rng.uniform(0.5, 4.0)
            phi += rng.normal() * np.exp(-((r - c) / w) ** 2)
        out.append((l, phi * (r / (1.0 + r)) ** l))
    return out


def weighted_elliptic_ratio(model: MetricModel | None, a: float, spec: EnsembleSpec = EnsembleSpec(),
                            t: float = 100.0) -> dict:
    """Ensemble maximum of the weighted elliptic ratio for h from the model at time t (flat if None)."""
    r = radial_grid(spec.r_max, spec.h)
    ratios = []
    for l, phi in bump_ensemble(spec):
        if model is None:
            prob = RadialEllipticProblem(l, r, np.ones_like(r), np.ones_like(r), np.zeros_like(r), a)
        else:
            prob = model_problem(model, t, l, r, a, F=np.zeros_like(r))
        ratios.append(elliptic_ratio(prob, phi, a))
    return {"a": a, "max_ratio": float(np.max(ratios)), "ratios": ratios}


def tail_scale_sweep(a: float, scales=(10.0, 100.0, 1000.0), model: MetricModel | None = None,
                     h: float = 0.05, t: float = 100.0) -> dict:
    """Weighted ratio of phi = P^{-1} F for a compact F on domains of growing radius.

    The solution carries the monopole tail r^{-1} out to the domain radius; for
    a >= 3/2 the left side diverges with that radius.
    """
    out = []
    for s in scales:
        r = radial_grid(s, h)
        F = np.exp(-((r - 2.0) / 1.0) ** 2)
        if model is None:
            prob = RadialEllipticProblem(0, r, np.ones_like(r), np.ones_like(r), F, a)
        else:
            prob = model_problem(model, t, 0, r, a, F=F)
        phi = _solve(_operator(0, r, prob.h_r, prob.h_t), F, 0)
        out.append(elliptic_ratio(prob, phi, a))
    return {"a": a, "scales": list(scales), "ratios": out, "growth": float(out[-1] / out[0])}
