"""Continuous-time state-space realizations and the few interconnections the
certifier needs (series, identity augmentation, block-diagonal lifting).

Sign convention: a plant ``G`` maps the gradient input ``u`` to the output
``y`` with any negative feedback sign folded into ``B``.  The closed loop is
always ``y = G u, u = grad f(y)``.  A gradient-flow channel ``dy/dt = -u`` is
therefore realized as ``A = 0, B = -I, C = I``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, signal

__all__ = [
    "StateSpace",
    "series",
    "augment_with_identity",
    "kron_lift",
    "stack_outputs",
    "spectral_abscissa",
    "check_tracking_assumption",
    "TrackingCheck",
    "static_gain",
    "from_tf",
    "gradient_flow_channel",
    "vehicle_with_prefilter",
    "feedback_matrix",
    "freq_grid",
]


def _as2d(M, rows=None, cols=None) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        M = np.zeros((rows or 0, cols or 0))
    return M


@dataclass(frozen=True)
class StateSpace:
    """Real LTI realization ``dx/dt = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    n: int = field(init=False)
    m: int = field(init=False)
    p: int = field(init=False)

    def __post_init__(self):
        D = _as2d(self.D)
        p, m = D.shape
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n)
        B = np.asarray(self.B, dtype=float).reshape(n, m)
        C = np.asarray(self.C, dtype=float).reshape(p, n)
        for name, M in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} has non-finite entries")
            M = M.copy()
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "p", p)

    @classmethod
    def build(cls, A, B, C, D) -> "StateSpace":
        """Construct with explicit dimension checks and readable errors."""
        A = _as2d(A)
        D = _as2d(D)
        n = A.shape[0] if A.size else 0
        B = _as2d(B, n, D.shape[1])
        C = _as2d(C, D.shape[0], n)
        if A.size and A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape != (n, D.shape[1]):
            raise ValueError(f"B has shape {B.shape}, expected {(n, D.shape[1])}")
        if C.shape != (D.shape[0], n):
            raise ValueError(f"C has shape {C.shape}, expected {(D.shape[0], n)}")
        return cls(A if n else np.zeros((0, 0)), B, C, D)

    def freqresp(self, s: complex) -> np.ndarray:
        """Transfer matrix ``C (sI - A)^-1 B + D`` at complex frequency ``s``."""
        if self.n == 0:
            return self.D.astype(complex)
        X = np.linalg.solve(s * np.eye(self.n) - self.A, self.B)
        return self.C @ X + self.D

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in "ABCD"}

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpace":
        return cls.build(d["A"], d["B"], d["C"], d["D"])


def freq_grid(num: int = 20, lo: float = 1e-2, hi: float = 1e2) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), num)


def static_gain(K) -> StateSpace:
    K = _as2d(K)
    return StateSpace.build(np.zeros((0, 0)), np.zeros((0, K.shape[1])), np.zeros((K.shape[0], 0)), K)


def from_tf(num: Sequence[float], den: Sequence[float]) -> StateSpace:
    """SISO transfer function to controllable canonical form."""
    if len(den) == 0 or den[0] == 0:
        raise ValueError("leading denominator coefficient must be nonzero")
    if len(num) > len(den):
        raise ValueError("improper transfer function")
    A, B, C, D = signal.tf2ss(num, den)
    return StateSpace.build(A, B, C, D)


def gradient_flow_channel(d: int = 1) -> StateSpace:
    """``dy/dt = -u``: the plant whose loop with ``u = grad f(y)`` is gradient flow."""
    I = np.eye(d)
    return StateSpace.build(np.zeros((d, d)), -I, I, np.zeros((d, d)))


def vehicle_with_prefilter(A, B_q, B_p, C, k_p: float, k_d: float) -> StateSpace:
    """Tracking vehicle driven by the second-order reference generator.

    State ordering is ``(x, q, p)``; ``dq/dt = p`` and
    ``dp/dt = -k_d p - k_p u``.
    """
    A = _as2d(A)
    C = _as2d(C)
    d = C.shape[0]
    nx = A.shape[0]
    B_q = _as2d(B_q).reshape(nx, d)
    B_p = _as2d(B_p).reshape(nx, d)
    I, Z = np.eye(d), np.zeros((d, d))
    AG = np.block([
        [A, B_q, B_p],
        [np.zeros((d, nx)), Z, I],
        [np.zeros((d, nx)), Z, -k_d * I],
    ])
    BG = np.vstack([np.zeros((nx, d)), Z, -k_p * I])
    CG = np.hstack([C, Z, Z])
    return StateSpace.build(AG, BG, CG, np.zeros((d, d)))


def series(outer: StateSpace, inner: StateSpace) -> StateSpace:
    """``outer * inner``: feed the output of ``inner`` into ``outer``.

    State ordering of the result is ``[x_inner; x_outer]``.
    """
    if outer.m != inner.p:
        raise ValueError(
            f"dimension mismatch: inner has {inner.p} outputs, outer expects {outer.m} inputs")
    n1, n2 = inner.n, outer.n
    A = np.block([
        [inner.A, np.zeros((n1, n2))],
        [outer.B @ inner.C, outer.A],
    ])
    B = np.vstack([inner.B, outer.B @ inner.D])
    C = np.hstack([outer.D @ inner.C, outer.C])
    D = outer.D @ inner.D
    return StateSpace.build(A, B, C, D)


def stack_outputs(*systems: StateSpace) -> StateSpace:
    """Systems sharing one input, outputs stacked, states block-diagonal."""
    m = systems[0].m
    if any(s.m != m for s in systems):
        raise ValueError("all systems must share the input dimension")
    A = linalg.block_diag(*[s.A for s in systems]) if any(s.n for s in systems) else np.zeros((0, 0))
    B = np.vstack([s.B for s in systems])
    C = linalg.block_diag(*[s.C for s in systems])
    D = np.vstack([s.D for s in systems])
    return StateSpace.build(A, B, C, D)


def augment_with_identity(G: StateSpace) -> StateSpace:
    """``[G; I]``: append the input itself as extra outputs."""
    C = np.vstack([G.C, np.zeros((G.m, G.n))])
    D = np.vstack([G.D, np.eye(G.m)])
    return StateSpace.build(G.A, G.B, C, D)


def kron_lift(G: StateSpace, k: int) -> StateSpace:
    """``I_k (x) G``: ``k`` decoupled copies of ``G``.

    Channel ``i`` of the lift is the ``i``-th block of inputs/outputs, and
    the state is the stack of the ``k`` copy states.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    I = np.eye(int(k))
    return StateSpace.build(np.kron(I, G.A), np.kron(I, G.B), np.kron(I, G.C), np.kron(I, G.D))


def spectral_abscissa(G: StateSpace | np.ndarray) -> float:
    A = G.A if isinstance(G, StateSpace) else _as2d(G)
    if A.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def feedback_matrix(G: StateSpace, K) -> np.ndarray:
    """State matrix of the loop ``u = K y`` (positive feedback, see module doc)."""
    K = _as2d(K) if np.ndim(K) else float(K) * np.eye(G.m)
    M = np.eye(G.p) - G.D @ K
    return G.A + G.B @ K @ np.linalg.solve(M, G.C)


@dataclass(frozen=True)
class TrackingCheck:
    ok: bool
    residual: float
    reason: str = ""

    def __bool__(self):
        return self.ok


def check_tracking_assumption(A, B_q, C, tol: float = 1e-9) -> TrackingCheck:
    """Hurwitz ``A`` and unit static gain ``-C A^-1 B_q = I``."""
    A, C = _as2d(A), _as2d(C)
    B_q = _as2d(B_q).reshape(A.shape[0], -1)
    try:
        gain = -C @ np.linalg.solve(A, B_q)
    except np.linalg.LinAlgError:
        return TrackingCheck(False, np.inf, "A is singular")
    if np.linalg.cond(A) > 1e14:
        return TrackingCheck(False, np.inf, "A is singular")
    if gain.shape[0] != gain.shape[1]:
        return TrackingCheck(False, np.inf, f"-C A^-1 B_q has shape {gain.shape}")
    res = float(np.max(np.abs(gain - np.eye(gain.shape[0]))))
    if spectral_abscissa(A) >= 0:
        return TrackingCheck(False, res, "A is not Hurwitz")
    if res > tol:
        return TrackingCheck(False, res, "static gain differs from identity")
    return TrackingCheck(True, res)
