"""Rate and flocking LMIs as :class:`SdpProblem` instances.

Rate LMI for a loop ``y = G u``, ``u = grad f(y)`` with ``f`` in S(m, L):
the composite ``Psi = Pi * [G; I]`` has realization ``(A, B, C, D)`` and we
search ``X >= delta I`` and multiplier parameters with

    [A'X + XA + 2 alpha X, XB; B'X, 0] + [C D]' (P (x) I_d) [C D] <= -delta I.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .sdp_interface import SdpProblem, default_delta
from .ss_core import (StateSpace, augment_with_identity, check_tracking_assumption,
                      kron_lift, series, vehicle_with_prefilter)
from .zf_multiplier import MultiplierClass, PTemplate, PValues, ZFConfig, build_multiplier, p_quadratic_form

__all__ = [
    "FlockingModel",
    "assemble_rate_lmi",
    "assemble_rate_lmi_full",
    "assemble_rate_lmi_lpv",
    "assemble_flocking_lmi",
    "flocking_storage_matrix",
    "flocking_z_matrix",
    "flocking_kernel",
    "storage_value",
    "initial_condition_bound",
    "initial_condition_ok",
    "pvalues_from_assignment",
]


def _declare_template(prob: SdpProblem, cfg: ZFConfig):
    """Declare ``H, c_i, a_j`` and return a function ``values -> P``."""
    tmpl = PTemplate(cfg)
    nu = cfg.nu
    prob.scalar("H")
    cn = [prob.scalar(f"c{i + 1}", lower=0.0) for i in range(nu)] if cfg.cls.uses_causal else []
    an = [prob.scalar(f"a{i + 1}", lower=0.0) for i in range(nu)] if cfg.cls.uses_anticausal else []
    w = tmpl.integral_weights()

    def coeffs(v):
        c = [v[n] for n in cn] if cn else [0.0] * nu
        a = [v[n] for n in an] if an else [0.0] * nu
        return c, a

    def integral_gap(v):
        c, a = coeffs(v)
        return v["H"] - float(w @ np.asarray(c, dtype=float)) - float(w @ np.asarray(a, dtype=float)) if nu else v["H"]

    prob.add_linear(integral_gap, "ge", name="H>=int h")

    def P_of(v):
        c, a = coeffs(v)
        return p_quadratic_form(tmpl, PValues(v["H"], c, a), check=False)

    prob.meta.update(cfg=cfg, template=tmpl)
    return P_of


def pvalues_from_assignment(assignment: dict, cfg: ZFConfig) -> PValues:
    nu = cfg.nu
    c = [assignment.get(f"c{i + 1}", 0.0) for i in range(nu)]
    a = [assignment.get(f"a{i + 1}", 0.0) for i in range(nu)]
    return PValues(assignment["H"], c, a)


def _composite(G: StateSpace, m: float, L: float, d: int, alpha: float, cfg: ZFConfig):
    if G.m != d or G.p != d:
        raise ValueError(f"plant has {G.m} inputs and {G.p} outputs, expected d={d} of each")
    Pi = build_multiplier(m, L, d, cfg.with_alpha(alpha)).Pi
    psi = series(Pi, augment_with_identity(G))
    return psi.A, psi.B, np.hstack([psi.C, psi.D])


def _rate_lmi_fn(A, B, CD, alpha, d, P_of):
    n = A.shape[0]
    k = B.shape[1]
    Id = np.eye(d)

    def fn(v):
        X = v["X"] if n else np.zeros((0, 0))
        top = A.T @ X + X @ A + 2 * alpha * X
        XB = X @ B
        M = np.block([[top, XB], [XB.T, np.zeros((k, k))]])
        return M + CD.T @ np.kron(P_of(v), Id) @ CD

    return fn


def assemble_rate_lmi_lpv(vertices: Sequence[StateSpace], m: float, L: float, d: int, alpha: float,
                          cfg: ZFConfig, delta: float | None = None) -> SdpProblem:
    """Shared storage and multiplier imposed at every vertex plant."""
    if not vertices:
        raise ValueError("need at least one vertex")
    shapes = {(G.n, G.m, G.p) for G in vertices}
    if len(shapes) > 1:
        raise ValueError(f"vertex plants have inconsistent dimensions {sorted(shapes)}")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    delta = default_delta() if delta is None else delta
    prob = SdpProblem(f"rate(alpha={alpha:g})")
    parts = [_composite(G, m, L, d, alpha, cfg) for G in vertices]
    n = parts[0][0].shape[0]
    if n:
        prob.matrix("X", n, psd_margin=delta)
    P_of = _declare_template(prob, cfg)
    for i, (A, B, CD) in enumerate(parts):
        prob.add_lmi(_rate_lmi_fn(A, B, CD, alpha, d, P_of), "le", delta, name=f"rate[{i}]")
    prob.meta.update(alpha=alpha, m=m, L=L, d=d)
    return prob


def assemble_rate_lmi(G: StateSpace, m: float, L: float, d: int, alpha: float, cfg: ZFConfig,
                      delta: float | None = None) -> SdpProblem:
    return assemble_rate_lmi_lpv([G], m, L, d, alpha, cfg, delta)


def assemble_rate_lmi_full(G: StateSpace, N: int, d: int, m: float, L: float, alpha: float,
                           cfg: ZFConfig, delta: float | None = None) -> SdpProblem:
    """Network LMI on ``I_N (x) G`` with ``P (x) I_{Nd}``."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if G.m != d or G.p != d:
        raise ValueError(f"plant has {G.m} inputs and {G.p} outputs, expected d={d} of each")
    return assemble_rate_lmi(kron_lift(G, int(N)), m, L, int(N) * d, alpha, cfg, delta)


# -- flocking ---------------------------------------------------------------

@dataclass(frozen=True)
class FlockingModel:
    """Single-agent vehicle, pre-filter gains and local quadratic-constraint data."""

    A: np.ndarray
    B_q: np.ndarray
    B_p: np.ndarray
    C: np.ndarray
    k_p: float
    k_d: float
    d: int
    M10: np.ndarray = field(default_factory=lambda: np.diag([9.0, -1.0]))
    M20: np.ndarray = field(default_factory=lambda: np.diag([9.0, -1.0]))
    c1: float = np.inf
    c2: float = np.inf

    def __post_init__(self):
        d = int(self.d)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        nx = A.shape[0]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B_q", np.asarray(self.B_q, dtype=float).reshape(nx, d))
        object.__setattr__(self, "B_p", np.asarray(self.B_p, dtype=float).reshape(nx, d))
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float).reshape(d, nx))
        for name in ("M10", "M20"):
            M = np.asarray(getattr(self, name), dtype=float)
            if M.shape != (2, 2) or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be a symmetric 2x2 matrix")
            object.__setattr__(self, name, M)
        if self.k_p <= 0 or self.k_d < 0:
            raise ValueError("need k_p > 0 and k_d >= 0")
        chk = check_tracking_assumption(self.A, self.B_q, self.C)
        if not chk.ok:
            raise ValueError(f"vehicle violates the tracking assumption: {chk.reason}")

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    def with_kd(self, k_d: float) -> "FlockingModel":
        return FlockingModel(self.A, self.B_q, self.B_p, self.C, self.k_p, k_d, self.d,
                             self.M10, self.M20, self.c1, self.c2)

    def plant(self) -> StateSpace:
        return vehicle_with_prefilter(self.A, self.B_q, self.B_p, self.C, self.k_p, self.k_d)


def flocking_storage_matrix(model: FlockingModel, R: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """``X0 = R + [[Q, Q A^-1 B_q, 0], [*, B_q' A^-T Q A^-1 B_q, 0], [0, 0, I]]``."""
    d, nx = model.d, model.nx
    T = np.linalg.solve(model.A, model.B_q)  # A^-1 B_q
    QT = Q @ T
    base = np.block([
        [Q, QT, np.zeros((nx, d))],
        [QT.T, T.T @ QT, np.zeros((d, d))],
        [np.zeros((d, nx)), np.zeros((d, d)), np.eye(d)],
    ])
    return R + base


def flocking_z_matrix(model: FlockingModel, v: dict) -> np.ndarray:
    """Evaluate the flocking matrix ``Z`` for the values ``R, Q, mu, eps, lam1, lam2``."""
    d, nx = model.d, model.nx
    G = model.plant()
    n0 = G.n
    A0 = G.A
    B0 = np.hstack([G.B, -G.B])
    X0 = flocking_storage_matrix(model, v["R"], v["Q"])
    XB = X0 @ B0
    Z = np.block([[A0.T @ X0 + X0 @ A0, XB], [XB.T, np.zeros((2 * d, 2 * d))]])
    Id = np.eye(d)
    ip = nx + d          # p block
    i1 = n0              # d1 block
    Z[ip:ip + d, ip:ip + d] += v["eps"] * Id
    Z[ip:ip + d, i1:i1 + d] += v["mu"] * Id
    Z[i1:i1 + d, ip:ip + d] += v["mu"] * Id
    ntot = n0 + 2 * d
    S1 = np.zeros((2 * d, ntot))
    S1[:d, nx:nx + d] = Id
    S1[d:, n0:n0 + d] = Id
    S2 = np.zeros((2 * d, ntot))
    S2[:d, :nx] = -model.C
    S2[:d, nx:nx + d] = Id
    S2[d:, n0 + d:] = Id
    Z += S1.T @ np.kron(v["lam1"] * model.M10, Id) @ S1
    Z += S2.T @ np.kron(v["lam2"] * model.M20, Id) @ S2
    return Z


def flocking_kernel(model: FlockingModel) -> np.ndarray:
    """Directions every admissible ``Z <= 0`` annihilates when ``M10[0,0] > 0``.

    Along the equilibrium family ``x = -A^-1 B_q w, q = w, p = 0`` the
    second channel vanishes and ``v'Zv = lam1 M10[0,0] |w|^2``, so
    ``lam1 = 0`` and ``Z v = 0``; the ``d1`` diagonal block is then zero and
    its column must vanish too.  Returns an orthonormal basis (columns).
    """
    d, nx = model.d, model.nx
    ntot = nx + 4 * d
    T = np.linalg.solve(model.A, model.B_q)
    V = np.zeros((ntot, 2 * d))
    V[:nx, :d] = -T
    V[nx:nx + d, :d] = np.eye(d)
    V[nx + 2 * d:nx + 3 * d, d:] = np.eye(d)
    return np.linalg.qr(V)[0]


def assemble_flocking_lmi(model: FlockingModel, delta: float | None = None,
                          pins: dict | None = None, reduce: bool = True) -> SdpProblem:
    """Search ``R >= 0, Q > 0, mu > 0, lam_i >= 0, eps > 0`` with ``Z <= 0``.

    ``Z <= 0`` has no interior: see :func:`flocking_kernel`.  With
    ``reduce`` (and ``M10[0,0] > 0``) it is imposed in the equivalent form
    ``lam1 = 0``, ``Z V = 0`` and ``U'ZU <= -delta I`` on the orthogonal
    complement ``U`` of the forced kernel ``V``, which interior-point
    solvers handle reliably.  Otherwise ``Z <= 0`` is imposed as is.
    ``pins`` fixes named scalars.
    """
    delta = default_delta() if delta is None else delta
    d, nx = model.d, model.nx
    prob = SdpProblem("flocking")
    prob.matrix("R", nx + 2 * d, psd_margin=0.0)
    prob.matrix("Q", nx, psd_margin=delta)
    prob.scalar("mu", lower=delta)
    prob.scalar("eps", lower=delta)
    prob.scalar("lam1", lower=0.0)
    prob.scalar("lam2", lower=0.0)
    for name, val in (pins or {}).items():
        prob.add_linear(lambda v, n=name, b=val: v[n] - b, "eq", name=f"{name}={val:g}")
    if reduce and model.M10[0, 0] > 0:
        V = flocking_kernel(model)
        U = linalg.null_space(V.T)
        prob.add_linear(lambda v: v["lam1"], "eq", name="lam1=0")
        for i in range(V.shape[0]):
            for j in range(V.shape[1]):
                prob.add_linear(lambda v, i=i, j=j: (flocking_z_matrix(model, v) @ V)[i, j], "eq",
                                name=f"ZV[{i},{j}]=0")
        prob.add_lmi(lambda v: U.T @ flocking_z_matrix(model, v) @ U, "le", delta, name="U'ZU")
    else:
        prob.add_lmi(lambda v: flocking_z_matrix(model, v), "le", 0.0, strict=False, name="Z")
    prob.meta.update(model=model)
    return prob


def storage_value(model: FlockingModel, solution: dict, x, q, p, y_star, f_gap: float) -> float:
    """``V_s``: quadratic part summed over agents plus ``2 mu (f(q) - f_min)``.

    ``x, q, p`` are arrays of shape ``(N, nx)``, ``(N, d)``, ``(N, d)`` (or
    one agent's vectors); ``y_star`` has the shape of ``q``.
    """
    d, nx = model.d, model.nx
    X0 = flocking_storage_matrix(model, solution["R"], solution["Q"])
    x = np.asarray(x, dtype=float).reshape(-1, nx)
    q = np.asarray(q, dtype=float).reshape(-1, d)
    p = np.asarray(p, dtype=float).reshape(-1, d)
    ys = np.asarray(y_star, dtype=float).reshape(-1, d)
    x_star = -np.linalg.solve(model.A, model.B_q @ ys.T).T
    e = np.hstack([x - x_star, q - ys, p])
    quad = float(np.einsum("ij,jk,ik->", e, X0, e))
    return quad + 2.0 * solution["mu"] * float(f_gap)


def initial_condition_bound(model: FlockingModel, solution: dict) -> float:
    """``min{2 c1 mu, c2 lambda_min(Q) / ||C||^2}`` with the spectral norm."""
    lq = float(np.linalg.eigvalsh(solution["Q"])[0])
    cn = float(np.linalg.norm(model.C, 2))
    return min(2 * model.c1 * solution["mu"], model.c2 * lq / cn ** 2)


def initial_condition_ok(model: FlockingModel, solution: dict, x0, q0, p0, y_star, f_gap: float) -> bool:
    return storage_value(model, solution, x0, q0, p0, y_star, f_gap) <= initial_condition_bound(model, solution)
