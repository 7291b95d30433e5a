"""Mode-by-mode evolution of box_g phi = F on spherically symmetric models.

Each spherical-harmonic mode phi_l(t, r) is evolved through psi = r phi_l on a
uniform radial grid. The scheme is centered and second order; the mixed
d_t d_r term and the first-order time term are taken at levels n+1 and n-1,
the angular term with weights (1/4, 1/2, 1/4) over n+1, n, n-1, so each step
is one tridiagonal solve.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from scipy.linalg import solve_banded

from .metric_models import MetricModel, ModelError


class SolverError(RuntimeError):
    """Raised on a failed solve or a non-finite state; carries the last good level."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class GridError(ValueError):
    pass


# ---------------------------------------------------------------------------
# coefficients

def _require_radial(model: MetricModel):
    if model.radial is None:
        raise ModelError("solver requires spherical symmetry")
    return model.radial


@lru_cache(maxsize=32)
def _coeff_kernel(model: MetricModel):
    """jit(vmap) map (t, r) -> (A, B, C, D, a_t, a_r) for the psi = r phi form."""
    radial = _require_radial(model)

    def parts(t, r):
        a, b, c, d = radial.coeffs(t, r)
        return a, b, c, d

    def dens(t, r):
        a, b, c, _ = parts(t, r)
        ds = radial.dsqrt_tr(t, r)
        return jnp.stack([ds * a, ds * b, ds * c])

    def single(t, r):
        a, b, c, d = parts(t, r)
        ds = radial.dsqrt_tr(t, r)
        dt = jax.jvp(lambda s: dens(s, r), (t,), (jnp.ones_like(t),))[1]
        dr = jax.jvp(lambda s: dens(t, s), (r,), (jnp.ones_like(r),))[1]
        a_t = (dt[0] + dr[1]) / ds
        a_r = (dt[1] + dr[2]) / ds
        return jnp.stack([a, b, c, d, a_t, a_r])

    return jax.jit(jax.vmap(single, out_axes=1))


def _raw_coeffs(model, t, r):
    t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
    out = np.array(_coeff_kernel(model)(t.ravel(), r.ravel()))
    return out.reshape((6,) + t.shape)


def mode_equation_coeffs(model: MetricModel, l: int, t, r):
    """(c_tt, c_tr, c_rr, c_t, c_r, c_0) with box_g(phi_l Y) = (c_tt d_t^2 + 2 c_tr d_t d_r
    + c_rr d_r^2 + c_t d_t + c_r d_r + c_0) phi_l times Y."""
    a, b, c, d, a_t, a_r = _raw_coeffs(model, t, r)
    r = np.broadcast_to(np.asarray(r, float), a.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (a, b, c, a_t + 2.0 * b / r, a_r + 2.0 * c / r, -d * l * (l + 1) / r**2)


def psi_equation_coeffs(model: MetricModel, l: int, t, r):
    """Coefficients of the same operator acting on psi = r phi_l and multiplied by r:
    (A, 2B, C, a_t, a_r, a_0) for psi_tt, psi_tr, psi_rr, psi_t, psi_r, psi."""
    a, b, c, d, a_t, a_r = _raw_coeffs(model, t, r)
    r = np.broadcast_to(np.asarray(r, float), a.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        a0 = -a_r / r - d * l * (l + 1) / r**2
    return a, 2.0 * b, c, a_t, a_r, a0


def max_speed(model: MetricModel, r_max: float, t0: float, t_end: float, n_r: int = 400, n_t: int = 24) -> float:
    """Largest radial characteristic speed |dr/dt| sampled over the domain."""
    rs = np.linspace(0.0, r_max, n_r)
    ts = np.linspace(t0, max(t_end, t0), n_t)
    T, R = np.meshgrid(ts, rs, indexing="ij")
    a, b, c, *_ = _raw_coeffs(model, T, R)
    disc = np.sqrt(np.maximum(b * b - a * c, 0.0))
    return float(np.max((np.abs(b) + disc) / np.abs(a)))


# ---------------------------------------------------------------------------
# grid, data, probes

@dataclass(frozen=True)
class RadialGrid:
    r_max: float
    nr: int
    dt: float
    t0: float
    t_end: float
    c_max: float = 1.0
    cfl: float = 0.5

    @property
    def dr(self) -> float:
        return self.r_max / (self.nr - 1)

    @property
    def r(self) -> np.ndarray:
        return np.linspace(0.0, self.r_max, self.nr)

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t0) / self.dt))

    def level_time(self, n: int) -> float:
        return self.t0 + n * self.dt

    @classmethod
    def build(cls, model: MetricModel, *, t_end: float, t0: float = 0.0, dr: float = 0.1,
              r_max: float | None = None, cfl: float = 0.5, data_support: float = 0.0,
              margin: float = 5.0) -> "RadialGrid":
        """Causally sized grid: r_max >= data_support + c_max (t_end - t0) + margin."""
        guess = r_max if r_max is not None else data_support + 1.5 * (t_end - t0) + margin
        c_max = max_speed(model, guess, t0, t_end)
        need = data_support + c_max * (t_end - t0) + margin
        if r_max is None:
            r_max = math.ceil(need / dr) * dr
        elif r_max < need:
            raise GridError(f"r_max = {r_max} is below the causal size {need:.3f}")
        nr = int(round(r_max / dr)) + 1
        dr_eff = r_max / (nr - 1)
        steps = max(1, math.ceil((t_end - t0) / (cfl * dr_eff / c_max) - 1e-9))
        return cls(r_max=float(r_max), nr=nr, dt=(t_end - t0) / steps, t0=t0, t_end=t_end,
                   c_max=c_max, cfl=cfl)

    def check_cfl(self):
        if self.dt > self.cfl * self.dr / self.c_max * (1 + 1e-12):
            raise GridError(f"dt = {self.dt} violates CFL {self.cfl} dr / c_max")


def _grad(f, r):
    return np.gradient(f, r, edge_order=2)


@dataclass(frozen=True)
class CauchyData:
    """Per-mode (phi_0, phi_1) sampled on the grid (values of phi_l, not psi)."""

    phi0: Mapping[int, np.ndarray]
    phi1: Mapping[int, np.ndarray]
    r: np.ndarray

    @property
    def modes(self) -> list[int]:
        return sorted(set(self.phi0) | set(self.phi1))

    def mode(self, l):
        z = np.zeros_like(self.r)
        return np.asarray(self.phi0.get(l, z), float), np.asarray(self.phi1.get(l, z), float)

    @property
    def support(self) -> float:
        rad = 0.0
        for l in self.modes:
            f0, f1 = self.mode(l)
            mag = np.abs(f0) + np.abs(f1)
            if mag.max() > 0:
                nz = np.nonzero(mag > 1e-16 * mag.max())[0]
                rad = max(rad, float(self.r[nz[-1]]))
        return rad

    def h_norm(self) -> float:
        """||<r> f|| + ||<r>^2 grad_x f|| for f = (phi_1, grad_x phi_0); modes add in l^2."""
        r = self.r
        w1, w2 = 1.0 + r**2, (1.0 + r**2) ** 2
        first = second = 0.0
        for l in self.modes:
            lam = l * (l + 1)
            f0, f1 = self.mode(l)
            d0, d1 = _grad(f0, r), _grad(f1, r)
            dd0 = _grad(d0, r)
            rs = np.where(r > 0, r, 1.0)  # the r^2 weight removes the axis node
            ang, rad = f0 / rs**2, d0 / rs
            dens1 = f1**2 + d0**2 + lam * (f0 / rs) ** 2
            # sphere-averaged |Hess(f0 Y)|^2 for a unit-normalized harmonic of degree l
            hess = dd0**2 + 2 * lam * (rad - ang) ** 2 + (lam * lam - lam) * ang**2 \
                - 2 * lam * ang * rad + 2 * rad**2
            dens2 = d1**2 + lam * (f1 / rs) ** 2 + hess
            first += np.trapezoid(w1 * dens1 * r**2, r)
            second += np.trapezoid(w2 * dens2 * r**2, r)
        return float(np.sqrt(first) + np.sqrt(second))


def cauchy_data(grid: RadialGrid, profiles: Mapping[int, tuple[Callable | None, Callable | None]]) -> CauchyData:
    """Sample per-mode profile callables f(r) on the grid."""
    r = grid.r
    z = np.zeros_like(r)
    p0 = {l: (np.asarray(f0(r), float) if f0 is not None else z.copy()) for l, (f0, _) in profiles.items()}
    p1 = {l: (np.asarray(f1(r), float) if f1 is not None else z.copy()) for l, (_, f1) in profiles.items()}
    return CauchyData(p0, p1, r)


@dataclass(frozen=True)
class ProbeSpec:
    r_obs: Sequence[float] = (1.0,)
    u0: Sequence[float] = ()
    snapshot_times: Sequence[float] = ()
    record_every: int = 1


@dataclass(frozen=True)
class ModeState:
    l: int
    psi: np.ndarray
    psi_prev: np.ndarray
    t: float
    n: int = 0

    def __post_init__(self):
        if self.psi[0] != 0.0 or self.psi[-1] != 0.0:
            raise ValueError("psi must vanish at r = 0 and r = r_max")


@dataclass
class ModeTrace:
    l: int
    times: np.ndarray
    interior: np.ndarray  # (n_times, n_robs, 3): phi, phi_t, phi_r
    cone: np.ndarray  # (n_times, n_u0, 2): r, phi
    energy: np.ndarray  # flat discrete energy at half levels
    snap_times: np.ndarray
    snap_psi: np.ndarray  # (n_snap, nr)
    snap_psi_t: np.ndarray


@dataclass
class SolutionTrace:
    model_id: str
    grid: RadialGrid
    probes: ProbeSpec
    modes: dict[int, ModeTrace] = field(default_factory=dict)

    @property
    def r(self):
        return self.grid.r

    @property
    def snap_times(self) -> np.ndarray:
        first = next(iter(self.modes.values()))
        return first.snap_times

    def phi_snapshots(self, l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(phi, phi_t, phi_r) of mode l at every snapshot, shape (n_snap, nr)."""
        m = self.modes[l]
        return psi_to_phi(m.snap_psi, m.snap_psi_t, self.r)

    def save(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        meta = {"model": self.model_id, "grid": self.grid.__dict__, "r_obs": list(self.probes.r_obs),
                "u0": list(self.probes.u0), "modes": sorted(self.modes)}
        (d / "trace.json").write_text(json.dumps(meta, indent=2))
        written.append(d / "trace.json")
        for l, m in self.modes.items():
            p = d / f"probes_l{l}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                head = ["t"]
                for ro in self.probes.r_obs:
                    head += [f"phi@{ro}", f"phi_t@{ro}", f"phi_r@{ro}"]
                for u0 in self.probes.u0:
                    head += [f"r@u={u0}", f"phi@u={u0}"]
                head += ["energy"]
                w.writerow(head)
                for k, t in enumerate(m.times):
                    row = [repr(float(t))] + [repr(float(v)) for v in m.interior[k].ravel()]
                    row += [repr(float(v)) for v in m.cone[k].ravel()] + [repr(float(m.energy[k]))]
                    w.writerow(row)
            written.append(p)
            for name, arr in (("psi", m.snap_psi), ("psi_t", m.snap_psi_t)):
                p = d / f"snapshots_{name}_l{l}.csv"
                np.savetxt(p, np.column_stack([m.snap_times, arr]), delimiter=",",
                           header="t," + ",".join(f"{x:.10g}" for x in self.r), comments="", fmt="%.17g")
                written.append(p)
        return written

    @classmethod
    def load(cls, directory) -> "SolutionTrace":
        d = Path(directory)
        meta = json.loads((d / "trace.json").read_text())
        grid = RadialGrid(**meta["grid"])
        probes = ProbeSpec(r_obs=tuple(meta["r_obs"]), u0=tuple(meta["u0"]))
        out = cls(meta["model"], grid, probes)
        n_ro, n_u = len(probes.r_obs), len(probes.u0)
        for l in meta["modes"]:
            pr = np.loadtxt(d / f"probes_l{l}.csv", delimiter=",", skiprows=1, ndmin=2)
            psi = np.loadtxt(d / f"snapshots_psi_l{l}.csv", delimiter=",", skiprows=1, ndmin=2)
            psi_t = np.loadtxt(d / f"snapshots_psi_t_l{l}.csv", delimiter=",", skiprows=1, ndmin=2)
            interior = pr[:, 1:1 + 3 * n_ro].reshape(-1, n_ro, 3)
            cone = pr[:, 1 + 3 * n_ro:1 + 3 * n_ro + 2 * n_u].reshape(-1, n_u, 2)
            out.modes[l] = ModeTrace(l, pr[:, 0], interior, cone, pr[:, -1], psi[:, 0], psi[:, 1:], psi_t[:, 1:])
        return out


def psi_to_phi(psi, psi_t, r):
    """phi, phi_t, phi_r from psi = r phi, with one-sided limits at r = 0."""
    psi, psi_t = np.atleast_2d(psi), np.atleast_2d(psi_t)
    dr = r[1] - r[0]
    psi_r = np.gradient(psi, dr, axis=-1, edge_order=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = psi / r
        phi_t = psi_t / r
        phi_r = (psi_r - phi) / r
    phi[:, 0] = psi_r[:, 0]
    phi_t[:, 0] = (4 * psi_t[:, 1] - psi_t[:, 2]) / (2 * dr)
    phi_r[:, 0] = 0.0
    phi_r[:, 1] = (phi[:, 2] - phi[:, 0]) / (2 * dr)
    return phi, phi_t, phi_r


# ---------------------------------------------------------------------------
# stepping

def _lagrange4(values, r, targets):
    """Cubic interpolation of rows of ``values`` (last axis over r) and its r-derivative."""
    dr = r[1] - r[0]
    idx = np.clip(np.floor(np.asarray(targets) / dr).astype(int) - 1, 0, r.size - 4)
    s = (np.asarray(targets) - r[idx]) / dr
    nodes = np.arange(4.0)
    w = np.empty((len(idx), 4))
    dw = np.zeros((len(idx), 4))
    for k in range(4):
        others = [m for m in range(4) if m != k]
        den = np.prod([nodes[k] - nodes[m] for m in others])
        w[:, k] = np.prod([s - nodes[m] for m in others], axis=0) / den
        for skip in others:
            rest = [m for m in others if m != skip]
            dw[:, k] += np.prod([s - nodes[m] for m in rest], axis=0) / den
    gathered = values[..., idx[:, None] + np.arange(4)]
    return np.sum(gathered * w, axis=-1), np.sum(gathered * dw, axis=-1) / dr


class _CoefficientStream:
    """Serves psi-equation coefficients on interior nodes, batching time levels."""

    def __init__(self, model, l, grid, chunk=64):
        self.model, self.l, self.grid, self.chunk = model, l, grid, chunk
        self.r = grid.r[1:-1]
        self.static = bool(model.radial.static)
        self._cache = {}
        if self.static:
            self._static = psi_equation_coeffs(model, l, 0.0, self.r)

    def at(self, n_half: int):
        """Coefficients at time t0 + n_half * dt / 2."""
        if self.static:
            return self._static
        if n_half not in self._cache:
            self._cache.clear()
            ns = np.arange(n_half, n_half + self.chunk)
            ts = self.grid.t0 + 0.5 * ns * self.grid.dt
            T, R = np.meshgrid(ts, self.r, indexing="ij")
            cs = psi_equation_coeffs(self.model, self.l, T, R)
            for k, n in enumerate(ns):
                self._cache[int(n)] = tuple(c[k] for c in cs)
        return self._cache[n_half]


def _d1(v, dr):
    out = np.empty(v.size - 2)
    out[:] = (v[2:] - v[:-2]) / (2 * dr)
    return out


def _d2(v, dr):
    return (v[2:] - 2 * v[1:-1] + v[:-2]) / dr**2


def _solve(coefs, rhs, dt, dr, level):
    a, atr, _, a_t, _, a0 = coefs
    diag = a / dt**2 + a_t / (2 * dt) + a0 / 4
    if np.min(np.abs(diag)) * dt**2 < 1e-14:
        raise SolverError(f"tridiagonal pivot below 1e-14 at time level {level}")
    off = atr / (4 * dt * dr)
    if not np.any(off):
        return rhs / diag
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = off[:-1]
    ab[1] = diag
    ab[2, :-1] = -off[1:]
    try:
        return solve_banded((1, 1), ab, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"tridiagonal solve failed at time level {level}") from exc


def _rhs(coefs, psi, psi_prev, src, dt, dr):
    a, atr, c, a_t, a_r, a0 = coefs
    p, q = psi[1:-1], psi_prev[1:-1]
    rest = a * (-2 * p + q) / dt**2 - atr * _d1(psi_prev, dr) / (2 * dt) + c * _d2(psi, dr) \
        - a_t * q / (2 * dt) + a_r * _d1(psi, dr) + a0 * (2 * p + q) / 4
    return src - rest


def _flat_energy(psi_new, psi, r, dt, dr, l):
    """Discrete energy conserved exactly by the scheme on Minkowski."""
    kin = np.sum(((psi_new - psi) / dt) ** 2)
    grad = np.sum(np.diff(psi_new) * np.diff(psi)) / dr**2
    mid = 0.5 * (psi_new[1:-1] + psi[1:-1])
    pot = l * (l + 1) * np.sum(mid**2 / r[1:-1] ** 2)
    return 0.5 * dr * (kin + grad + pot)


def step(model: MetricModel, state: ModeState, grid: RadialGrid, source=None, coefs=None) -> ModeState:
    """Advance one level; ``source`` is r F_l at the current level on interior nodes."""
    coefs = coefs if coefs is not None else psi_equation_coeffs(model, state.l, state.t, grid.r[1:-1])
    src = np.zeros(grid.nr - 2) if source is None else source
    rhs = _rhs(coefs, state.psi, state.psi_prev, src, grid.dt, grid.dr)
    new = np.zeros_like(state.psi)
    new[1:-1] = _solve(coefs, rhs, grid.dt, grid.dr, state.n + 1)
    if not np.all(np.isfinite(new)):
        raise SolverError(f"non-finite solution at time level {state.n + 1}", last_good=state)
    return ModeState(state.l, new, state.psi, state.t + grid.dt, state.n + 1)


def _first_level(coefs, psi0, psi1, src, dt, dr):
    """psi at t0 + dt from the scheme with psi^{-1} = psi^{+1} - 2 dt psi_t."""
    a, atr, c, a_t, a_r, a0 = coefs
    p, v = psi0[1:-1], psi1[1:-1]
    rhs = src + 2 * a * (p + dt * v) / dt**2 - atr * _d1(psi1, dr) - c * _d2(psi0, dr) \
        - a_t * v - a_r * _d1(psi0, dr) - a0 * (p / 2 - dt * v / 2)
    out = np.zeros_like(psi0)
    out[1:-1] = rhs / (2 * a / dt**2 + a0 / 2)
    return out


class _ChartU:
    def __init__(self, chart, r):
        self.r = r
        self.fn = jax.jit(jax.vmap(chart.u_tr, in_axes=(None, 0)))
        a = np.asarray(self.fn(0.0, r)) - 0.0
        b = np.asarray(self.fn(137.25, r)) - 137.25
        self.static = np.allclose(a, b, rtol=0, atol=1e-12)
        self.shift = a

    def __call__(self, t):
        return t + self.shift if self.static else np.asarray(self.fn(t, self.r))


def _run_mode(model, l, data: CauchyData, source, grid: RadialGrid, probes: ProbeSpec,
              energy_guard: bool) -> ModeTrace:
    r, dt, dr = grid.r, grid.dt, grid.dr
    stream = _CoefficientStream(model, l, grid)
    chart_u = _ChartU(model.chart, r) if probes.u0 else None
    r_in = r[1:-1]

    def src(n_half):
        if source is None:
            return np.zeros(r_in.size)
        return r_in * np.asarray(source(grid.t0 + 0.5 * n_half * dt, r_in), float)

    f0, f1 = data.mode(l)
    psi0, psi1 = r * f0, r * f1
    psi0[0] = psi0[-1] = psi1[0] = psi1[-1] = 0.0
    if not (np.all(np.isfinite(psi0)) and np.all(np.isfinite(psi1))):
        raise SolverError("non-finite initial data", last_good=None)

    snaps = np.sort(np.asarray(probes.snapshot_times, float))
    if snaps.size and (snaps[0] < grid.t0 - 1e-12 or snaps[-1] > grid.t_end + 1e-12):
        raise GridError("snapshot times must lie in [t0, t_end]")
    snap_psi = np.zeros((snaps.size, grid.nr))
    snap_psi_t = np.zeros((snaps.size, grid.nr))
    s_idx = 0

    times, interior, cone, energy = [], [], [], []
    r_obs = np.asarray(probes.r_obs, float)
    u0 = np.asarray(probes.u0, float)

    def record(n, psi_prev, psi, psi_next, e):
        t = grid.level_time(n)
        psi_t = (psi_next - psi_prev) / (2 * dt)
        vals = np.zeros((r_obs.size, 3))
        if r_obs.size:
            (pv, pt), (dv, _) = _lagrange4(np.vstack([psi, psi_t]), r, r_obs)
            vals[:, 0] = pv / r_obs
            vals[:, 1] = pt / r_obs
            vals[:, 2] = (dv - pv / r_obs) / r_obs
        cvals = np.full((u0.size, 2), np.nan)
        if u0.size:
            u = chart_u(t)
            for k, uk in enumerate(u0):
                if u[-1] <= uk <= u[0]:
                    rk = float(np.interp(uk, u[::-1], r[::-1]))
                    if rk > 0:
                        pv, _ = _lagrange4(psi[None], r, np.array([rk]))
                        cvals[k] = (rk, pv[0, 0] / rk)
        times.append(t)
        interior.append(vals)
        cone.append(cvals)
        energy.append(e)

    def snapshot(n, psi_prev, psi, psi_next):
        nonlocal s_idx
        t_n = grid.level_time(n)
        while s_idx < snaps.size and snaps[s_idx] <= t_n + 0.5 * dt + 1e-12 * max(1.0, abs(t_n)):
            s = (snaps[s_idx] - t_n) / dt  # in [-1/2, 1/2]
            # quadratic through levels n-1, n, n+1
            snap_psi[s_idx] = psi + s * (psi_next - psi_prev) / 2 + s * s * (psi_next - 2 * psi + psi_prev) / 2
            snap_psi_t[s_idx] = ((psi_next - psi_prev) / 2 + s * (psi_next - 2 * psi + psi_prev)) / dt
            s_idx += 1

    coefs0 = stream.at(0)
    psi_next = _first_level(coefs0, psi0, psi1, src(0), dt, dr)
    psi_prev_virtual = psi_next - 2 * dt * psi1
    e0 = _flat_energy(psi_next, psi0, r, dt, dr, l)
    record(0, psi_prev_virtual, psi0, psi_next, e0)
    snapshot(0, psi_prev_virtual, psi0, psi_next)
    state = ModeState(l, psi_next, psi0, grid.t0 + dt, 1)
    ref = max(e0, 1e-300)
    for n in range(1, grid.n_steps + 1):
        coefs = stream.at(2 * n)
        try:
            new = step(model, state, grid, src(2 * n), coefs)
        except SolverError as exc:
            exc.last_good = state
            raise
        e = _flat_energy(new.psi, state.psi, r, dt, dr, l)
        if energy_guard and source is None and e0 > 0 and e > 10 * ref:
            raise SolverError("unstable configuration", last_good=state)
        if n % probes.record_every == 0:
            record(n, state.psi_prev, state.psi, new.psi, e)
        snapshot(n, state.psi_prev, state.psi, new.psi)
        state = new
    return ModeTrace(l, np.array(times), np.array(interior).reshape(len(times), r_obs.size, 3),
                     np.array(cone).reshape(len(times), u0.size, 2), np.array(energy),
                     snaps.copy(), snap_psi, snap_psi_t)


def run(model: MetricModel, data: CauchyData, source: Mapping[int, Callable] | None,
        grid: RadialGrid, probes: ProbeSpec = ProbeSpec(), modes: Sequence[int] | None = None,
        jobs: int = 1) -> SolutionTrace:
    """Evolve each requested mode independently and collect probes and snapshots.

    ``source[l](t, r)`` gives F_l; modes run on up to ``jobs`` worker threads.
    """
    _require_radial(model)
    grid.check_cfl()
    if data.r.size != grid.nr:
        raise GridError("data is not sampled on the solver grid")
    modes = list(data.modes if modes is None else modes)
    source = source or {}
    guard = model.id == "minkowski"  # energy is conserved only without a source
    trace = SolutionTrace(model.id, grid, probes)

    def one(l):
        return _run_mode(model, l, data, source.get(l), grid, probes, guard)

    if jobs > 1 and len(modes) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, modes))
    else:
        results = [one(l) for l in modes]
    for l, res in zip(modes, results):
        trace.modes[l] = res
    return trace


def self_convergence(model: MetricModel, profiles, *, t_end: float, dr: float, r_obs: float,
                     l: int = 0, r_max: float | None = None, cfl: float = 0.5) -> dict:
    """Three-grid order estimate log2(|q_h - q_{h/2}| / |q_{h/2} - q_{h/4}|) on probe values."""
    base = RadialGrid.build(model, t_end=t_end, dr=dr, r_max=r_max, cfl=cfl)
    series = []
    for k in range(3):
        grid = replace(base, nr=(base.nr - 1) * 2**k + 1, dt=base.dt / 2**k)
        data = cauchy_data(grid, {l: profiles})
        tr = run(model, data, None, grid, ProbeSpec(r_obs=(r_obs,)))
        series.append(tr.modes[l])
    coarse = series[0]
    vals = []
    for k, s in enumerate(series):
        stride = 2**k
        vals.append(s.interior[::stride, 0, 0][: coarse.times.size])
    e1 = np.max(np.abs(vals[0] - vals[1]))
    e2 = np.max(np.abs(vals[1] - vals[2]))
    return {"order": float(np.log2(e1 / e2)), "diff_coarse": float(e1), "diff_fine": float(e2),
            "times": coarse.times}
