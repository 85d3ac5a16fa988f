"""Zames-Falb alpha-IQC multipliers for gradients of functions in S(m, L).

The multiplier kernel is

    h(t) =  sum_i c_i t^(i-1) e^(-lam t) / (i-1)!     for t > 0
    h(t) =  sum_j a_j (-t)^(j-1) e^(lam t) / (j-1)!   for t < 0

with nonnegative coefficients, so ``h >= 0`` holds by construction and
``int h = sum c_i / lam^i + sum a_j / lam^j``.  The alpha-weighted
convolutions ``w1 = (e^(-2 alpha s) h(s)) * q`` and
``w2 = (e^(-2 alpha s) h(-s)) * p`` are then the outputs of chains of
first-order lags with pole ``-(lam + 2 alpha)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .ss_core import StateSpace, series, static_gain

__all__ = [
    "MultiplierClass",
    "ZFConfig",
    "PTemplate",
    "PValues",
    "MultiplierRealization",
    "sector_transform",
    "build_multiplier",
    "p_quadratic_form",
    "impulse_h",
    "DEFAULT_LAMBDA_GRID",
]

DEFAULT_LAMBDA_GRID = (0.5, 1.0, 2.0, 5.0, 10.0)


class MultiplierClass(str, enum.Enum):
    CC = "CC"
    CAUSAL = "causal"
    ANTICAUSAL = "anticausal"
    NONCAUSAL = "noncausal"

    @property
    def uses_causal(self) -> bool:
        return self in (MultiplierClass.CAUSAL, MultiplierClass.NONCAUSAL)

    @property
    def uses_anticausal(self) -> bool:
        return self in (MultiplierClass.ANTICAUSAL, MultiplierClass.NONCAUSAL)


@dataclass(frozen=True)
class ZFConfig:
    """Order, basis pole, rate and class of a multiplier."""

    nu: int = 0
    lam: float = 1.0
    alpha: float = 0.0
    cls: MultiplierClass = MultiplierClass.CC

    def __post_init__(self):
        object.__setattr__(self, "cls", MultiplierClass(self.cls))
        if not self.lam > 0:
            raise ValueError(f"pole lam must be positive, got {self.lam}")
        if self.alpha < 0:
            raise ValueError(f"rate alpha must be nonnegative, got {self.alpha}")
        if int(self.nu) != self.nu or self.nu < 0:
            raise ValueError(f"order nu must be a nonnegative integer, got {self.nu}")
        if self.cls is MultiplierClass.CC and self.nu != 0:
            raise ValueError("circle-criterion multipliers have order 0")
        if self.cls is not MultiplierClass.CC and self.nu < 1:
            raise ValueError(f"class {self.cls.value} needs order nu >= 1")

    def with_alpha(self, alpha: float) -> "ZFConfig":
        return ZFConfig(self.nu, self.lam, alpha, self.cls)

    def to_dict(self) -> dict:
        return {"nu": self.nu, "lam": self.lam, "alpha": self.alpha, "class": self.cls.value}


@dataclass(frozen=True)
class PValues:
    """Numeric multiplier parameters: ``H``, causal ``c`` and anti-causal ``a``."""

    H: float
    c: tuple = ()
    a: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))

    def to_dict(self) -> dict:
        return {"H": self.H, "c": list(self.c), "a": list(self.a)}


@dataclass(frozen=True)
class PTemplate:
    """Free-parameter set of the multiplier for one configuration.

    ``constraints()`` lists the linear conditions in the form
    ``(coefficients over [H, c_1..c_nu, a_1..a_nu], sense)`` with sense one
    of ``"ge"`` / ``"eq"`` against zero.
    """

    cfg: ZFConfig

    @property
    def nu(self) -> int:
        return self.cfg.nu

    @property
    def size(self) -> int:
        return 1 + 2 * self.nu

    def integral_weights(self) -> np.ndarray:
        lam = self.cfg.lam
        return np.array([lam ** -(i + 1) for i in range(self.nu)])

    def constraints(self) -> list[tuple[np.ndarray, str]]:
        nu, k = self.nu, self.size
        out = []
        for i in range(2 * nu):
            row = np.zeros(k)
            row[1 + i] = 1.0
            causal = i < nu
            allowed = self.cfg.cls.uses_causal if causal else self.cfg.cls.uses_anticausal
            out.append((row, "ge" if allowed else "eq"))
        # H >= int h; with nu = 0 this is H >= 0
        row = np.zeros(k)
        row[0] = 1.0
        w = self.integral_weights()
        row[1:1 + nu] = -w
        row[1 + nu:] = -w
        out.append((row, "ge"))
        return out

    def violation(self, values: PValues, tol: float = 1e-9) -> float:
        """Largest constraint violation (0 when the values are admissible)."""
        x = np.concatenate([[values.H], values.c, values.a])
        if x.size != self.size:
            raise ValueError(f"expected {self.nu} causal and anti-causal coefficients")
        worst = 0.0
        for row, sense in self.constraints():
            r = float(row @ x)
            worst = max(worst, -r if sense == "ge" else abs(r))
        return worst

    def check(self, values: PValues, tol: float = 1e-9) -> None:
        v = self.violation(values)
        if v > tol * max(1.0, abs(values.H)):
            raise ValueError(f"multiplier parameters violate the template by {v:.3e}")


@dataclass(frozen=True)
class MultiplierRealization:
    """Filter ``Pi`` from ``[y~; u~]`` to ``z~`` and its output layout."""

    Pi: StateSpace
    cfg: ZFConfig
    d: int
    z_layout: tuple = field(default=())


def sector_transform(m: float, L: float, d: int = 1) -> StateSpace:
    """Static map ``[y~; u~] -> [p; q]`` with ``p = u~ - m y~``, ``q = L y~ - u~``."""
    if not m > 0 or m > L:
        raise ValueError(f"need 0 < m <= L, got m={m}, L={L}")
    I = np.eye(d)
    return static_gain(np.block([[-m * I, I], [L * I, -I]]))


def _chain(d: int, nu: int, pole: float) -> StateSpace:
    """Input ``v`` (width d) to ``(phi_1[v], ..., phi_nu[v])``, ``phi_i = 1/(s+pole)^i``."""
    I = np.eye(d)
    A = np.kron(np.eye(nu), -pole * I) + np.kron(np.eye(nu, k=-1), I)
    B = np.vstack([I] + [np.zeros((d, d))] * (nu - 1))
    return StateSpace.build(A, B, np.eye(nu * d), np.zeros((nu * d, d)))


def build_multiplier(m: float, L: float, d: int, cfg: ZFConfig) -> MultiplierRealization:
    """Realize ``Pi``: ``z~ = (p, q, phi_1..nu[q], phi_1..nu[p])``."""
    S = sector_transform(m, L, d)
    layout = ["p", "q"] + [f"phi{i + 1}[q]" for i in range(cfg.nu)] + [f"phi{i + 1}[p]" for i in range(cfg.nu)]
    if cfg.nu == 0:
        return MultiplierRealization(S, cfg, d, tuple(layout))
    pole = cfg.lam + 2.0 * cfg.alpha
    ch = _chain(d, cfg.nu, pole)
    nu, n = cfg.nu, cfg.nu * d
    Zn = np.zeros((n, n))
    # filter input is [p; q]: q drives the first chain, p the second
    A = np.block([[ch.A, Zn], [Zn, ch.A]])
    B = np.block([[np.zeros((n, d)), ch.B], [ch.B, np.zeros((n, d))]])
    C = np.vstack([np.zeros((2 * d, 2 * n)), np.eye(2 * n)])
    D = np.vstack([np.eye(2 * d), np.zeros((2 * n, 2 * d))])
    bank = StateSpace.build(A, B, C, D)
    return MultiplierRealization(series(bank, S), cfg, d, tuple(layout))


def p_quadratic_form(template: PTemplate, values: PValues, check: bool = True) -> np.ndarray:
    """Symmetric ``P`` with ``z~' (P (x) I) z~ = H p'q - sum c_i p'phi_i[q] - sum a_j q'phi_j[p]``."""
    if check:
        template.check(values)
    nu = template.nu
    k = 2 + 2 * nu
    P = np.zeros((k, k))
    P[0, 1] = P[1, 0] = values.H / 2
    for i in range(nu):
        P[0, 2 + i] = P[2 + i, 0] = -values.c[i] / 2
        P[1, 2 + nu + i] = P[2 + nu + i, 1] = -values.a[i] / 2
    return P


def impulse_h(values: PValues, lam: float, t) -> np.ndarray | float:
    """Kernel ``h(t)``; ``t = 0`` uses the causal branch."""
    t_arr = np.asarray(t, dtype=float)
    out = np.zeros_like(t_arr)
    pos = t_arr >= 0
    tp, tn = t_arr[pos], -t_arr[~pos]
    for i, ci in enumerate(values.c):
        out[pos] += ci * tp ** i * np.exp(-lam * tp) / math.factorial(i)
    for j, aj in enumerate(values.a):
        out[~pos] += aj * tn ** j * np.exp(-lam * tn) / math.factorial(j)
    return float(out) if np.ndim(t) == 0 else out
