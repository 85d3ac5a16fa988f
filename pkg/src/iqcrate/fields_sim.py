"""Fields, interaction potentials, networked RK4 simulation and empirical audits.

Stacked vectors are agent-major: ``y = (y_1, ..., y_N)`` with ``y_i`` in
``R^d``.  The loop simulated is ``eta' = A eta + B u``, ``y = C eta``,
``u = grad f(y)`` for ``N`` identical agents.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, signal
from scipy.stats import special_ortho_group

from .graph_tools import InteractionGraph, laplacian
from .lmi_assembly import FlockingModel
from .ss_core import StateSpace
from .zf_multiplier import PValues

log = logging.getLogger(__name__)

__all__ = [
    "ScalarField",
    "quadratic_field",
    "random_quadratic_field",
    "CompositePotential",
    "grad_f",
    "sigma_norm",
    "sigma_norm_grad",
    "Trajectory",
    "SimulationError",
    "simulate_network",
    "simulate_lpv",
    "flocking_initial_state",
    "affine_equilibrium",
    "RateFit",
    "estimate_rate",
    "ZFAudit",
    "empirical_zf_check",
    "shift_inequality_check",
    "minimizer_checks",
    "write_trajectory_csv",
]


# -- fields -----------------------------------------------------------------

@dataclass(frozen=True)
class ScalarField:
    """Field ``psi`` on ``R^d`` given by its gradient (and optionally value).

    ``hessian`` marks a quadratic field ``0.5 (y - y_opt)' H (y - y_opt)``
    and enables the exact affine propagator in the simulator.  ``radial``
    marks fields depending on ``|y - y_opt|`` only.
    """

    d: int
    grad: Callable[[np.ndarray], np.ndarray]
    value: Callable[[np.ndarray], float] | None = None
    sector: tuple[float, float] | None = None
    y_opt: np.ndarray | None = None
    hessian: np.ndarray | None = None
    radial: bool = False

    def spot_check(self, rng: np.random.Generator | None = None, pairs: int = 50,
                   scale: float = 10.0, rtol: float = 1e-9) -> bool:
        """Sector inequalities at random pairs of points."""
        if self.sector is None:
            return True
        m, L = self.sector
        rng = rng or np.random.default_rng(0)
        for _ in range(pairs):
            y1, y2 = rng.uniform(-scale, scale, (2, self.d))
            dy = y1 - y2
            s = float((self.grad(y1) - self.grad(y2)) @ dy)
            n2 = float(dy @ dy)
            if s < m * n2 * (1 - rtol) - 1e-12 or s > L * n2 * (1 + rtol) + 1e-12:
                return False
        return True


def quadratic_field(H, y_opt) -> ScalarField:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    y_opt = np.atleast_1d(np.asarray(y_opt, dtype=float))
    if not np.allclose(H, H.T):
        raise ValueError("Hessian must be symmetric")
    ev = np.linalg.eigvalsh(H)
    iso = np.allclose(H, ev[0] * np.eye(len(ev)))
    return ScalarField(
        d=len(y_opt),
        grad=lambda y: H @ (np.asarray(y) - y_opt),
        value=lambda y: 0.5 * float((np.asarray(y) - y_opt) @ H @ (np.asarray(y) - y_opt)),
        sector=(float(ev[0]), float(ev[-1])),
        y_opt=y_opt,
        hessian=H,
        radial=bool(iso),
    )


def random_quadratic_field(d: int, m: float, L: float, rng: np.random.Generator,
                           y_opt=None) -> ScalarField:
    """Eigenvalues log-uniform in ``[m, L]`` in a random orthogonal basis."""
    ev = np.exp(rng.uniform(np.log(m), np.log(L), d))
    U = special_ortho_group.rvs(d, random_state=rng) if d > 1 else np.eye(1)
    y_opt = rng.standard_normal(d) if y_opt is None else y_opt
    return quadratic_field(U @ np.diag(ev) @ U.T, y_opt)


def sigma_norm(z, eps: float = 1.0) -> float:
    z = np.asarray(z, dtype=float)
    return float((np.sqrt(1.0 + eps * (z @ z)) - 1.0) / eps)


def sigma_norm_grad(z, eps: float = 1.0) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z / np.sqrt(1.0 + eps * (z @ z))


@dataclass(frozen=True)
class CompositePotential:
    """``f(y) = V(y) + sum over informed i of psi(y_i)``.

    ``kind`` is ``"laplacian_quadratic"`` with
    ``V = 0.5 (y - r)' (Lap (x) I_d) (y - r)``, ``"sigma_flocking"`` with
    ``V = sum_edges k/2 (|y_i - y_j|_sigma - dist)^2``, ``"distance"`` with
    the Euclidean norm in place of the sigma-norm, or ``"none"``.
    """

    N: int
    d: int
    field: ScalarField
    informed: frozenset
    kind: str = "none"
    lap: np.ndarray | None = None
    r: np.ndarray | None = None
    edges: tuple = ()
    k: float = 1.0
    dist: float = 0.0
    eps: float = 1.0

    @classmethod
    def laplacian_quadratic(cls, g: InteractionGraph, field: ScalarField, r=None) -> "CompositePotential":
        d = field.d
        r = np.zeros(g.N * d) if r is None else np.asarray(r, dtype=float).reshape(g.N * d)
        return cls(g.N, d, field, g.informed, "laplacian_quadratic", laplacian(g), r, tuple(sorted(g.edges)))

    @classmethod
    def sigma_flocking(cls, g: InteractionGraph, field: ScalarField, k: float = 1.0, dist: float = 1.0,
                       eps: float = 1.0) -> "CompositePotential":
        return cls(g.N, field.d, field, g.informed, "sigma_flocking", edges=tuple(sorted(g.edges)),
                   k=k, dist=dist, eps=eps)

    @classmethod
    def distance(cls, g: InteractionGraph, field: ScalarField, k: float = 1.0, dist: float = 1.0):
        return cls(g.N, field.d, field, g.informed, "distance", edges=tuple(sorted(g.edges)), k=k, dist=dist)

    @classmethod
    def independent(cls, N: int, field: ScalarField, informed=None) -> "CompositePotential":
        inf = frozenset(range(N)) if informed is None else frozenset(informed)
        return cls(N, field.d, field, inf, "none")

    def __post_init__(self):
        if self.kind not in ("none", "laplacian_quadratic", "sigma_flocking", "distance"):
            raise ValueError(f"unknown interaction kind {self.kind!r}")
        object.__setattr__(self, "informed", frozenset(int(i) for i in self.informed))

    def _blocks(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.size != self.N * self.d:
            raise ValueError(f"expected a stacked vector of length {self.N * self.d}, got {y.size}")
        return y.reshape(self.N, self.d)

    def grad(self, y) -> np.ndarray:
        Y = self._blocks(y)
        G = np.zeros_like(Y)
        if self.kind == "laplacian_quadratic":
            G += (self.lap @ (Y - self.r.reshape(self.N, self.d)))
        elif self.kind in ("sigma_flocking", "distance"):
            for i, j in self.edges:
                z = Y[i] - Y[j]
                if self.kind == "sigma_flocking":
                    s, gz = sigma_norm(z, self.eps), sigma_norm_grad(z, self.eps)
                else:
                    s = float(np.linalg.norm(z))
                    gz = z / s if s > 0 else np.zeros_like(z)
                term = self.k * (s - self.dist) * gz
                G[i] += term
                G[j] -= term
        for i in self.informed:
            G[i] += self.field.grad(Y[i])
        return G.ravel()

    def value(self, y) -> float:
        if self.field.value is None:
            raise ValueError("field has no value oracle")
        Y = self._blocks(y)
        v = 0.0
        if self.kind == "laplacian_quadratic":
            e = (Y - self.r.reshape(self.N, self.d)).ravel()
            v += 0.5 * float(e @ np.kron(self.lap, np.eye(self.d)) @ e)
        elif self.kind in ("sigma_flocking", "distance"):
            for i, j in self.edges:
                z = Y[i] - Y[j]
                s = sigma_norm(z, self.eps) if self.kind == "sigma_flocking" else float(np.linalg.norm(z))
                v += 0.5 * self.k * (s - self.dist) ** 2
        return v + sum(self.field.value(Y[i]) for i in self.informed)

    def affine(self) -> tuple[np.ndarray, np.ndarray] | None:
        """``(M, c)`` with ``grad f(y) = M y + c`` when the potential is quadratic."""
        if self.kind in ("sigma_flocking", "distance") or self.field.hessian is None:
            return None
        Id = np.eye(self.d)
        E = np.zeros((self.N, self.N))
        for i in self.informed:
            E[i, i] = 1.0
        M = np.kron(E, self.field.hessian)
        c = -np.kron(E, self.field.hessian) @ np.tile(self.field.y_opt, self.N)
        if self.kind == "laplacian_quadratic":
            Lk = np.kron(self.lap, Id)
            M = M + Lk
            c = c - Lk @ self.r
        return M, c


def grad_f(potential: CompositePotential, y) -> np.ndarray:
    return potential.grad(y)


# -- simulation ---------------------------------------------------------------

class SimulationError(RuntimeError):
    def __init__(self, msg: str, t: float | None = None):
        super().__init__(msg)
        self.t = t


@dataclass
class Trajectory:
    t: np.ndarray
    eta: np.ndarray
    y: np.ndarray
    u: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        if not (self.eta.shape[0] == self.y.shape[0] == self.u.shape[0] == n):
            raise ValueError("inconsistent sample counts")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0


def _lifted(G: StateSpace, N: int):
    if np.any(G.D != 0):
        raise ValueError("plants with direct feedthrough are not supported in simulation")
    I = np.eye(N)
    return np.kron(I, G.A), np.kron(I, G.B), np.kron(I, G.C)


def flocking_initial_state(model: FlockingModel, x0) -> np.ndarray:
    """Stacked ``(x_i, q_i, p_i)`` with ``q_i(0) = C x_i(0)`` and ``p_i(0) = 0``."""
    x0 = np.asarray(x0, dtype=float).reshape(-1, model.nx)
    q0 = x0 @ model.C.T
    return np.hstack([x0, q0, np.zeros_like(q0)]).ravel()


def _rk4(rhs, out, eta0, t_end, dt, affine_J=None, affine_b=None, record_every=1, meta=None):
    steps = int(round(t_end / dt))
    if steps < 1 or dt <= 0:
        raise ValueError("need dt > 0 and t_end >= dt")
    n_rec = steps // record_every + 1
    eta = np.array(eta0, dtype=float)
    ts = np.empty(n_rec)
    etas = np.empty((n_rec, eta.size))
    Phi = psi = None
    if affine_J is not None:
        hJ = dt * affine_J
        I = np.eye(len(eta))
        hJ2 = hJ @ hJ
        hJ3 = hJ2 @ hJ
        Phi = I + hJ + hJ2 / 2 + hJ3 / 6 + hJ3 @ hJ / 24
        psi = dt * (I + hJ / 2 + hJ2 / 6 + hJ3 / 24) @ affine_b
    # overflow is reported below as a SimulationError
    with np.errstate(over="ignore", invalid="ignore"):
        _steps(rhs, eta, ts, etas, steps, dt, record_every, Phi, psi)
    ys, us = out(ts, etas)
    return Trajectory(ts, etas, ys, us, dict(meta or {}))


def _steps(rhs, eta, ts, etas, steps, dt, record_every, Phi, psi):
    k = 0
    for s in range(steps + 1):
        if s % record_every == 0:
            ts[k], etas[k] = s * dt, eta
            k += 1
        if s == steps:
            break
        t = s * dt
        if Phi is not None:
            eta = Phi @ eta + psi
        else:
            k1 = rhs(t, eta)
            k2 = rhs(t + dt / 2, eta + dt / 2 * k1)
            k3 = rhs(t + dt / 2, eta + dt / 2 * k2)
            k4 = rhs(t + dt, eta + dt * k3)
            eta = eta + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(eta)):
            raise SimulationError(f"state became non-finite at t={t + dt:.6g}", t + dt)


def simulate_network(plant: StateSpace | FlockingModel, N: int, potential: CompositePotential, eta0,
                     t_end: float, dt: float = 1e-3, record_every: int = 1, exact_affine: bool = True,
                     meta: dict | None = None) -> Trajectory:
    """Fixed-step RK4 of ``N`` identical agents closed through ``grad f``.

    For a :class:`FlockingModel` the agent state is ``(x, q, p)``; build
    ``eta0`` with :func:`flocking_initial_state`.  Quadratic potentials use
    the RK4 one-step matrix directly (same iterates, less overhead).
    """
    G = plant.plant() if isinstance(plant, FlockingModel) else plant
    if potential.N != N or potential.d != G.m:
        raise ValueError(f"potential is for N={potential.N}, d={potential.d}; plant needs N={N}, d={G.m}")
    A, B, C = _lifted(G, N)
    eta0 = np.asarray(eta0, dtype=float).ravel()
    if eta0.size != A.shape[0]:
        raise ValueError(f"eta0 has length {eta0.size}, expected {A.shape[0]}")
    aff = potential.affine() if exact_affine else None
    J = b = None
    if aff is not None:
        M, c = aff
        J, b = A + B @ M @ C, B @ c
        lam = np.max(np.abs(np.linalg.eigvals(J))) if J.size else 0.0
        if lam > 0 and dt > 0.1 / lam * 10:
            log.warning("dt=%g is large against the fastest loop mode |%g|", dt, lam)

    def rhs(t, eta):
        return A @ eta + B @ potential.grad(C @ eta)

    def out(ts, etas):
        ys = etas @ C.T
        us = np.array([potential.grad(y) for y in ys]) if aff is None else ys @ aff[0].T + aff[1]
        return ys, us

    md = {"N": N, "dt": dt, **(meta or {})}
    return _rk4(rhs, out, eta0, t_end, dt, J, b, record_every, md)


def affine_equilibrium(plant: StateSpace | FlockingModel, N: int,
                       potential: CompositePotential) -> tuple[np.ndarray, np.ndarray]:
    """Equilibrium ``(eta*, y*)`` of the loop with a quadratic potential."""
    G = plant.plant() if isinstance(plant, FlockingModel) else plant
    aff = potential.affine()
    if aff is None:
        raise ValueError("equilibrium in closed form needs a quadratic potential")
    A, B, C = _lifted(G, N)
    M, c = aff
    eta = np.linalg.lstsq(A + B @ M @ C, -B @ c, rcond=None)[0]
    return eta, C @ eta


def simulate_lpv(vertices: Sequence[StateSpace], rho_values: Sequence[float], rho: Callable[[float], float],
                 N: int, potential: CompositePotential, eta0, t_end: float, dt: float = 1e-3,
                 record_every: int = 1, meta: dict | None = None) -> Trajectory:
    """RK4 with plant matrices affine in the scalar schedule ``rho(t)``.

    ``vertices[k]`` is the plant at ``rho_values[k]``; the first and last
    vertices define the affine map and every vertex must lie on it.
    """
    if len(vertices) < 2 or len(vertices) != len(rho_values):
        raise ValueError("need at least two vertices with matching parameter values")
    lifted = [_lifted(G, N) for G in vertices]
    r0, r1 = float(rho_values[0]), float(rho_values[-1])
    if r0 == r1:
        raise ValueError("first and last parameter values must differ")
    lo, hi = min(rho_values), max(rho_values)

    def mats(r: float):
        if not lo - 1e-12 <= r <= hi + 1e-12:
            raise SimulationError(f"schedule value {r:g} outside [{lo:g}, {hi:g}]")
        s = (r - r0) / (r1 - r0)
        return [(1 - s) * M0 + s * M1 for M0, M1 in zip(lifted[0], lifted[-1])]

    for G, r in zip(lifted[1:-1], rho_values[1:-1]):
        if not all(np.allclose(Mv, Mi) for Mv, Mi in zip(G, mats(float(r)))):
            raise ValueError(f"vertex at rho={r:g} is not on the affine line through the end vertices")

    def rhs(t, eta):
        A, B, C = mats(rho(t))
        return A @ eta + B @ potential.grad(C @ eta)

    def out(ts, etas):
        ys = np.array([mats(rho(t))[2] @ e for t, e in zip(ts, etas)])
        return ys, np.array([potential.grad(y) for y in ys])

    md = {"N": N, "dt": dt, "lpv": True, **(meta or {})}
    return _rk4(rhs, out, np.asarray(eta0, dtype=float).ravel(), t_end, dt, record_every=record_every, meta=md)


# -- rate estimation ----------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    ok: bool
    alpha: float = math.nan
    kappa: float = math.nan
    residual: float = math.nan
    oscillatory: bool = False
    reason: str = ""


def estimate_rate(traj: Trajectory, y_star, window: tuple[float, float] = (1e-6, 1e-1)) -> RateFit:
    """Slope of ``log |y(t) - y*|`` over the window ``[lo, hi] * max |y - y*|``.

    The reference is the peak error rather than the initial one so that
    transients which first grow (non-minimum-phase plants, pre-filters
    started at rest) do not shift the window.  Oscillatory decays are fit
    through their local maxima.
    """
    e = np.linalg.norm(traj.y - np.asarray(y_star, dtype=float).ravel(), axis=1)
    if not np.all(np.isfinite(e)):
        return RateFit(False, reason="non-finite error")
    ref = float(e.max())
    if ref == 0:
        return RateFit(False, reason="zero error")
    lo, hi = window[0] * ref, window[1] * ref
    # the error must stay below the floor from some time on (zero crossings
    # of an oscillating error do not count as decay)
    above = np.nonzero(e >= lo)[0]
    end = int(above[-1]) + 1
    if end >= len(e):
        return RateFit(False, reason=f"error did not settle below {window[0]:g} of its peak")
    start_cands = np.nonzero(e[:end] > hi)[0]
    start = int(start_cands[-1]) + 1 if start_cands.size else 0
    t, le = traj.t[start:end], np.log(np.maximum(e[start:end], 1e-300))
    if t.size < 3:
        return RateFit(False, reason="too few samples in the fit window")
    # oscillation: the log-error is not monotone across the window
    rises = np.diff(le) > 1e-12
    osc = bool(rises.sum() > 2)
    if osc:
        idx = signal.argrelmax(le)[0]
        if idx.size < 3:
            return RateFit(False, oscillatory=True, reason="too few envelope peaks")
        t_fit, le_fit = t[idx], le[idx]
    else:
        t_fit, le_fit = t, le
    slope, icpt = np.polyfit(t_fit, le_fit, 1)
    resid = float(np.sqrt(np.mean((le_fit - (slope * t_fit + icpt)) ** 2)))
    alpha = -float(slope)
    if alpha <= 0:
        return RateFit(False, alpha, reason="non-decaying fit", oscillatory=osc)
    with np.errstate(divide="ignore"):
        kappa = float(np.exp(np.max(np.log(e[:end]) + alpha * traj.t[:end])))
    return RateFit(True, alpha, kappa, resid, osc)


# -- ZF audits ----------------------------------------------------------------

@dataclass(frozen=True)
class ZFAudit:
    min_integral: float
    energy: float
    T_at_min: float

    def ok(self, rel: float = 1e-6) -> bool:
        return self.min_integral >= -rel * self.energy


def _pq(ytil, util, m, L):
    return util - m * ytil, L * ytil - util


def _sector_check(ytil, util, m, L, rng, pairs=200, rtol=1e-6):
    n = ytil.shape[0]
    idx = rng.integers(0, n, (pairs, 2))
    for i, j in idx:
        dy, du = ytil[i] - ytil[j], util[i] - util[j]
        n2 = float(dy @ dy)
        s = float(du @ dy)
        slack = rtol * (n2 + float(du @ du)) + 1e-14
        if s < m * n2 - slack or s > L * n2 + slack or float(du @ du) > L * s + slack:
            raise ValueError(f"samples {i}, {j} violate the declared sector [{m:g}, {L:g}]")


def _causal_conv(kernel: np.ndarray, x: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid rule for ``int_0^t kernel(t - s) x(s) ds`` on a uniform grid."""
    n = x.shape[0]
    full = signal.fftconvolve(kernel[:, None], x, axes=0)[:n]
    return dt * (full - 0.5 * kernel[0] * x - 0.5 * kernel[:n, None] * x[0])


def _trim(ytil: np.ndarray, floor: float) -> int:
    """Samples up to the first one after the peak that drops below ``floor * peak``."""
    e = np.linalg.norm(ytil, axis=1)
    k = int(np.argmax(e))
    small = np.nonzero(e[k:] < floor * e[k])[0]
    return k + int(small[0]) + 1 if small.size else len(e)


def empirical_zf_check(t, ytil, util, m: float, L: float, alpha: float, values: PValues, lam: float,
                       T_grid: Sequence[float] | None = None, floor: float = 1e-8,
                       rng: np.random.Generator | None = None) -> ZFAudit:
    """Minimum over ``T`` of ``int_0^T e^{2 alpha t} (H p'q - p'w1 - q'w2) dt``.

    ``ytil = y - y*`` and ``util = grad f(y)``.  By default the horizon ends
    where ``|ytil|`` falls below ``floor`` times its peak, before round-off
    noise gets amplified by the exponential weight.
    """
    t = np.asarray(t, dtype=float)
    ytil = np.asarray(ytil, dtype=float).reshape(len(t), -1)
    util = np.asarray(util, dtype=float).reshape(len(t), -1)
    _sector_check(ytil, util, m, L, rng or np.random.default_rng(0))
    n = _trim(ytil, floor) if T_grid is None else len(t)
    t, ytil, util = t[:n], ytil[:n], util[:n]
    dt = t[1] - t[0]
    p, q = _pq(ytil, util, m, L)
    s = t - t[0]
    k1 = np.zeros_like(s)
    k2 = np.zeros_like(s)
    for i, ci in enumerate(values.c):
        k1 += ci * s ** i * np.exp(-(lam + 2 * alpha) * s) / math.factorial(i)
    for j, aj in enumerate(values.a):
        k2 += aj * s ** j * np.exp(-(lam + 2 * alpha) * s) / math.factorial(j)
    w1 = _causal_conv(k1, q, dt)
    w2 = _causal_conv(k2, p, dt)
    wt = np.exp(2 * alpha * s)
    integrand = wt * (values.H * np.sum(p * q, 1) - np.sum(p * w1, 1) - np.sum(q * w2, 1))
    cum = integrate.cumulative_trapezoid(integrand, s, initial=0.0)
    energy = float(integrate.trapezoid(wt * (np.sum(p * p, 1) + np.sum(q * q, 1)), s))
    if T_grid is None:
        idx = np.arange(n)
    else:
        idx = np.clip(np.searchsorted(s, np.asarray(T_grid, dtype=float)), 0, n - 1)
    k = idx[int(np.argmin(cum[idx]))]
    return ZFAudit(float(cum[k]), energy, float(s[k]))


def shift_inequality_check(t, ytil, util, m: float, L: float, alpha: float, taus: Sequence[float] | None = None,
                      T: float | None = None, floor: float = 1e-8) -> tuple[float, float]:
    """``min over tau of int_0^T e^{2 alpha t} p'(q - beta(tau) q_T(t - tau)) dt``.

    ``q_T`` vanishes outside ``[0, T]`` and ``beta(tau) = min(1, e^{-2 alpha tau})``.
    The default ``tau`` grid has 21 points on ``[-T, 2T]``.  Returns the
    minimum and the weighted energy of ``p`` and ``q``.
    """
    t = np.asarray(t, dtype=float)
    ytil = np.asarray(ytil, dtype=float).reshape(len(t), -1)
    util = np.asarray(util, dtype=float).reshape(len(t), -1)
    n = _trim(ytil, floor)
    s = (t - t[0])[:n]
    if T is not None:
        n = min(n, int(np.searchsorted(s, T)) + 1)
        s = s[:n]
    T = float(s[-1])
    dt = s[1] - s[0]
    p, q = _pq(ytil[:n], util[:n], m, L)
    wt = np.exp(2 * alpha * s)
    taus = np.linspace(-T, 2 * T, 21) if taus is None else np.asarray(taus, dtype=float)
    worst = np.inf
    for tau in taus:
        k = int(round(tau / dt))
        qs = np.zeros_like(q)
        if 0 <= k < n:
            qs[k:] = q[: n - k]
        elif -n < k < 0:
            qs[: n + k] = q[-k:]
        beta = min(1.0, math.exp(-2 * alpha * tau))
        val = float(integrate.trapezoid(wt * np.sum(p * (q - beta * qs), 1), s))
        worst = min(worst, val)
    energy = float(integrate.trapezoid(wt * (np.sum(p * p, 1) + np.sum(q * q, 1)), s))
    return worst, energy


# -- minimizers -----------------------------------------------------------------

def _in_hull(points: np.ndarray, target: np.ndarray, tol: float = 0.0) -> bool:
    """Whether ``target`` is within ``tol`` (max-norm) of the convex hull of ``points``."""
    k, d = points.shape
    # variables: weights w, then e >= |points' w - target| componentwise
    c = np.zeros(k + 1)
    c[-1] = 1.0
    ones = np.ones((d, 1))
    A_ub = np.block([[points.T, -ones], [-points.T, -ones]])
    b_ub = np.concatenate([target, -target])
    A_eq = np.concatenate([np.ones(k), [0.0]])[None, :]
    res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                           bounds=[(0, None)] * (k + 1), method="highs")
    return res.status == 0 and float(res.x[-1]) <= tol + 1e-12


def minimizer_checks(potential: CompositePotential, z, tol: float = 1e-5, eq_tol: float = 1e-6) -> dict:
    """Report which equilibrium characterizations apply at ``z`` and whether they hold."""
    z = np.asarray(z, dtype=float).ravel()
    gn = float(np.linalg.norm(potential.grad(z)))
    if gn > eq_tol:
        raise ValueError(f"not an equilibrium: |grad f(z)| = {gn:.3e}")
    N, d = potential.N, potential.d
    Z = z.reshape(N, d)
    fld = potential.field
    inf = sorted(potential.informed)
    checks: dict[str, bool] = {}
    if fld.y_opt is not None and inf:
        y_opt = fld.y_opt
        if potential.kind == "laplacian_quadratic":
            R = potential.r.reshape(N, d)
            if np.allclose(R, 0):
                checks["consensus"] = bool(np.allclose(Z, np.tile(y_opt, (N, 1)), atol=tol))
            if len(inf) == 1:
                i = inf[0]
                checks["single_informed_offset"] = bool(np.allclose(Z, y_opt + (R - R[i]), atol=tol))
        if fld.hessian is not None and potential.kind != "none":
            checks["informed_centroid"] = bool(np.allclose(Z[inf].mean(0), y_opt, atol=tol))
        if fld.radial:
            checks["in_informed_hull"] = _in_hull(Z[inf], y_opt, tol)
    return {"grad_norm": gn, "checks": checks, "holds": all(checks.values())}


def write_trajectory_csv(traj: Trajectory, path: str | os.PathLike) -> None:
    """Columns ``t, y_1..y_{Nd}, u_1..u_{Nd}``."""
    k = traj.y.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"y_{i + 1}" for i in range(k)] + [f"u_{i + 1}" for i in range(k)])
        for row in np.hstack([traj.t[:, None], traj.y, traj.u]):
            w.writerow([f"{v:.17g}" for v in row])
