"""Semidefinite feasibility problems with a swappable conic backend.

Problems are declared with named scalar and symmetric-matrix variables and
constraints written as plain numpy functions of a value dictionary.  Each
constraint function must be affine; its coefficient matrices are recovered
by evaluating it at the origin and at unit vectors, and affinity is checked
at a random point.  The backend therefore only ever sees the standard form
``F0 + sum_k x_k F_k`` which is also what the SDPA dump writes.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "SdpProblem",
    "FeasibilityResult",
    "SolveOptions",
    "VerificationReport",
    "Status",
    "solve_feasibility",
    "verify_solution",
    "default_delta",
    "CvxpyBackend",
    "write_sdpa",
]

Values = Mapping[str, "float | np.ndarray"]


def default_delta() -> float:
    """Strictness margin, overridable through ``IQCRATE_DELTA``."""
    raw = os.environ.get("IQCRATE_DELTA")
    if raw is None:
        return 1e-8
    val = float(raw)
    if not val >= 0:
        raise ValueError(f"IQCRATE_DELTA must be nonnegative, got {raw}")
    return val


class Status:
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class _Var:
    name: str
    size: int  # 0 for scalars

    @property
    def count(self) -> int:
        return 1 if self.size == 0 else self.size * (self.size + 1) // 2


@dataclass
class _Lmi:
    fn: Callable[[Values], np.ndarray]
    sense: str  # "le": F <= -margin I ; "ge": F >= margin I
    margin: float
    strict: bool
    name: str
    F0: np.ndarray | None = None
    F: np.ndarray | None = None  # shape (k*k, nvar)


@dataclass
class _Lin:
    fn: Callable[[Values], float]
    sense: str  # "le", "ge", "eq" against zero
    name: str
    a0: float = 0.0
    a: np.ndarray | None = None


class SdpProblem:
    """Feasibility problem over named scalar and symmetric-matrix variables."""

    def __init__(self, name: str = "sdp"):
        self.name = name
        self._vars: dict[str, _Var] = {}
        self._lmis: list[_Lmi] = []
        self._lins: list[_Lin] = []
        self._compiled = False
        self.meta: dict = {}

    # -- declaration -------------------------------------------------------
    def scalar(self, name: str, lower: float | None = None, upper: float | None = None) -> str:
        self._declare(_Var(name, 0))
        if lower is not None:
            self.add_linear(lambda v, n=name, b=lower: v[n] - b, "ge", name=f"{name}>={lower:g}")
        if upper is not None:
            self.add_linear(lambda v, n=name, b=upper: v[n] - b, "le", name=f"{name}<={upper:g}")
        return name

    def matrix(self, name: str, size: int, psd_margin: float | None = None) -> str:
        """Symmetric variable; ``psd_margin`` adds ``X >= margin I`` (non-strict when 0)."""
        if size < 1:
            raise ValueError(f"matrix variable {name} needs size >= 1")
        self._declare(_Var(name, int(size)))
        if psd_margin is not None:
            self.add_lmi(lambda v, n=name: v[n], "ge", psd_margin, name=f"{name}>=0")
        return name

    def _declare(self, var: _Var):
        if var.name in self._vars:
            raise ValueError(f"variable {var.name!r} declared twice")
        self._vars[var.name] = var
        self._compiled = False

    def add_lmi(self, fn: Callable[[Values], np.ndarray], sense: str, margin: float = 0.0,
                strict: bool | None = None, name: str | None = None) -> None:
        """``fn(values) <= -margin I`` (sense "le") or ``>= margin I`` (sense "ge")."""
        if sense not in ("le", "ge"):
            raise ValueError(f"LMI sense must be 'le' or 'ge', got {sense!r}")
        if margin < 0:
            raise ValueError("margin must be nonnegative")
        strict = margin > 0 if strict is None else strict
        self._lmis.append(_Lmi(fn, sense, float(margin), strict, name or f"lmi{len(self._lmis)}"))
        self._compiled = False

    def add_linear(self, fn: Callable[[Values], float], sense: str, name: str | None = None) -> None:
        if sense not in ("le", "ge", "eq"):
            raise ValueError(f"linear sense must be le/ge/eq, got {sense!r}")
        self._lins.append(_Lin(fn, sense, name or f"lin{len(self._lins)}"))
        self._compiled = False

    # -- vectorization -----------------------------------------------------
    @property
    def variables(self) -> dict[str, int]:
        return {k: v.size for k, v in self._vars.items()}

    @property
    def nvar(self) -> int:
        return sum(v.count for v in self._vars.values())

    @property
    def lmis(self) -> list[_Lmi]:
        self.compile()
        return self._lmis

    @property
    def linears(self) -> list[_Lin]:
        self.compile()
        return self._lins

    def unpack(self, x: np.ndarray) -> dict[str, float | np.ndarray]:
        out: dict[str, float | np.ndarray] = {}
        i = 0
        for v in self._vars.values():
            if v.size == 0:
                out[v.name] = float(x[i])
            else:
                M = np.zeros((v.size, v.size))
                iu = np.triu_indices(v.size)
                M[iu] = x[i:i + v.count]
                out[v.name] = M + np.triu(M, 1).T
            i += v.count
        return out

    def pack(self, values: Values) -> np.ndarray:
        missing = set(self._vars) - set(values)
        if missing:
            raise KeyError(f"assignment misses variables {sorted(missing)}")
        parts = []
        for v in self._vars.values():
            if v.size == 0:
                parts.append([float(values[v.name])])
            else:
                M = np.asarray(values[v.name], dtype=float)
                parts.append(M[np.triu_indices(v.size)])
        return np.concatenate(parts) if parts else np.zeros(0)

    def compile(self, rng_seed: int = 0) -> None:
        """Extract affine coefficients from every constraint function."""
        if self._compiled:
            return
        n = self.nvar
        basis = [self.unpack(np.zeros(n))]
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            basis.append(self.unpack(e))
        xr = np.random.default_rng(rng_seed).standard_normal(n)
        vr = self.unpack(xr)
        for c in self._lmis:
            F0 = self._sym(c.fn(basis[0]), c.name)
            cols = [(self._sym(c.fn(b), c.name) - F0).ravel() for b in basis[1:]]
            F = np.column_stack(cols) if cols else np.zeros((F0.size, 0))
            pred = F0.ravel() + F @ xr
            got = self._sym(c.fn(vr), c.name).ravel()
            if not np.allclose(pred, got, rtol=1e-8, atol=1e-8 * (1 + np.abs(got).max(initial=0))):
                raise ValueError(f"constraint {c.name} is not affine in the declared variables")
            c.F0, c.F = F0, F
        for c in self._lins:
            a0 = float(c.fn(basis[0]))
            a = np.array([float(c.fn(b)) - a0 for b in basis[1:]])
            if not np.isclose(a0 + a @ xr, float(c.fn(vr)), rtol=1e-8, atol=1e-8):
                raise ValueError(f"linear constraint {c.name} is not affine")
            c.a0, c.a = a0, a
        self._compiled = True

    @staticmethod
    def _sym(M, name: str) -> np.ndarray:
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise ValueError(f"constraint {name} is not square: {M.shape}")
        if not np.allclose(M, M.T, atol=1e-9 * (1 + np.abs(M).max(initial=0))):
            raise ValueError(f"constraint {name} is not symmetric")
        return (M + M.T) / 2


@dataclass
class SolveOptions:
    solver: str = "CLARABEL"
    bound: float = 1e4
    verify_tol: float = 1e-7
    infeasible_tol: float = 1e-9
    dump_sdpa: str | None = None


@dataclass
class VerificationReport:
    """``margins`` are measured after the strictness margin is removed.

    ``strict_deficit`` is the largest amount by which a strict constraint
    eats into more than half of its own margin.  It must be zero: a
    tolerance larger than the margin would otherwise let a merely
    semidefinite matrix pass as a strict certificate.
    """

    margins: dict[str, float]
    max_violation: float
    tol: float
    strict_deficit: float = 0.0

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tol and self.strict_deficit == 0.0


@dataclass
class FeasibilityResult:
    status: str
    assignment: dict | None = None
    max_violation: float = float("nan")
    solver_stats: dict = field(default_factory=dict)
    report: VerificationReport | None = None
    diagnostic: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == Status.FEASIBLE


def verify_solution(p: SdpProblem, assignment: Values, tol: float = 1e-7) -> VerificationReport:
    """Per-constraint eigenvalue margins after the strictness margin is removed."""
    margins: dict[str, float] = {}
    deficit = 0.0
    for c in p._lmis:
        M = SdpProblem._sym(c.fn(assignment), c.name)
        if c.sense == "ge":
            m = float(np.linalg.eigvalsh(M)[0]) - c.margin
        else:
            m = -float(np.linalg.eigvalsh(M)[-1]) - c.margin
        margins[c.name] = m
        if c.strict:
            deficit = max(deficit, -(m + 0.5 * c.margin))
    for c in p._lins:
        r = float(c.fn(assignment))
        margins[c.name] = {"ge": r, "le": -r, "eq": -abs(r)}[c.sense]
    worst = max((-m for m in margins.values()), default=0.0)
    return VerificationReport(margins, max(0.0, worst), tol, deficit)


class Backend(Protocol):
    def solve(self, p: SdpProblem, opts: SolveOptions) -> tuple[str, np.ndarray | None, float, dict]:
        """Return ``(solver status, x, best shift s, stats)``."""


class CvxpyBackend:
    """Maximize a common shift ``s <= 1`` on all strict constraints.

    ``s >= 0`` at the optimum means every strict constraint holds with its
    margin.  A box ``|x_i| <= bound`` keeps homogeneous problems bounded.
    """

    def solve(self, p: SdpProblem, opts: SolveOptions):
        import cvxpy as cp

        p.compile()
        n = p.nvar
        x = cp.Variable(n) if n else None
        s = cp.Variable()
        cons = [s <= 1]
        if n:
            cons.append(cp.abs(x) <= opts.bound)
        for c in p._lmis:
            k = c.F0.shape[0]
            vec = c.F0.ravel() + (c.F @ x if n else 0)
            M = cp.reshape(vec, (k, k), order="C")
            M = (M + M.T) / 2
            shift = c.margin + s if c.strict else c.margin
            I = np.eye(k)
            cons.append((M - shift * I if c.sense == "ge" else -M - shift * I) >> 0)
        for c in p._lins:
            expr = c.a0 + (c.a @ x if n else 0)
            cons.append({"ge": expr >= 0, "le": expr <= 0, "eq": expr == 0}[c.sense])
        prob = cp.Problem(cp.Maximize(s), cons)
        t0 = time.perf_counter()
        prob.solve(solver=opts.solver)
        stats = {"time": time.perf_counter() - t0, "solver": opts.solver}
        try:
            stats["iterations"] = prob.solver_stats.num_iters
        except AttributeError:
            pass
        xv = None if x is None else (None if x.value is None else np.asarray(x.value))
        if n == 0:
            xv = np.zeros(0)
        sv = float("nan") if s.value is None else float(s.value)
        return prob.status, xv, sv, stats


def solve_feasibility(p: SdpProblem, opts: SolveOptions | None = None,
                      backend: Backend | None = None) -> FeasibilityResult:
    """Solve, then re-check every constraint numerically before reporting feasible."""
    opts = opts or SolveOptions()
    backend = backend or CvxpyBackend()
    p.compile()
    if opts.dump_sdpa:
        write_sdpa(p, opts.dump_sdpa)
    try:
        status, x, s, stats = backend.solve(p, opts)
    except Exception as exc:  # solver crashes must never read as feasible
        # one retry inside a smaller box usually gets past numerical breakdowns
        retry = SolveOptions(**{**opts.__dict__, "bound": opts.bound * 1e-2, "dump_sdpa": None})
        try:
            status, x, s, stats = backend.solve(p, retry)
            stats["retried"] = True
        except Exception as exc2:
            log.warning("backend failure on %s: %s / %s", p.name, exc, exc2)
            return FeasibilityResult(Status.INCONCLUSIVE, diagnostic=f"backend failure: {exc2}")
    stats["shift"] = s
    if status in ("infeasible", "infeasible_inaccurate"):
        return FeasibilityResult(Status.INFEASIBLE, solver_stats=stats, diagnostic=status)
    if status not in ("optimal", "optimal_inaccurate") or x is None:
        return FeasibilityResult(Status.INCONCLUSIVE, solver_stats=stats, diagnostic=f"solver status {status}")
    if s < -opts.infeasible_tol and status == "optimal":
        return FeasibilityResult(Status.INFEASIBLE, solver_stats=stats, diagnostic=f"best shift {s:.3e} < 0")
    assignment = p.unpack(x)
    report = verify_solution(p, assignment, opts.verify_tol)
    if s >= 0 and report.ok:
        return FeasibilityResult(Status.FEASIBLE, assignment, report.max_violation, stats, report)
    return FeasibilityResult(Status.INCONCLUSIVE, assignment, report.max_violation, stats, report,
                             diagnostic=f"shift {s:.3e}, verification violation {report.max_violation:.3e}, "
                             f"strict deficit {report.strict_deficit:.3e}")


def write_sdpa(p: SdpProblem, path: str) -> None:
    """Sparse SDPA file: ``sum_k x_k F_k - F_0 >= 0`` with a zero objective.

    Linear constraints go into one trailing diagonal block; equalities appear
    as two opposite inequalities.
    """
    p.compile()
    n = p.nvar
    blocks: list[tuple[np.ndarray, np.ndarray]] = []  # (G0, Gk) with G0 + sum x_k G_k >= 0
    for c in p._lmis:
        k = c.F0.shape[0]
        sgn = 1.0 if c.sense == "ge" else -1.0
        blocks.append((sgn * c.F0 - c.margin * np.eye(k), sgn * c.F))
    rows0, rowsa = [], []
    for c in p._lins:
        for sgn in {"ge": (1.0,), "le": (-1.0,), "eq": (1.0, -1.0)}[c.sense]:
            rows0.append(sgn * c.a0)
            rowsa.append(sgn * c.a)
    sizes = [b[0].shape[0] for b in blocks] + ([-len(rows0)] if rows0 else [])
    lines = [f'"{p.name}: {", ".join(p._vars)}"', str(n), str(len(sizes)),
             " ".join(str(s) for s in sizes), " ".join(["0"] * n) if n else "0"]

    def emit(mat_no: int, blk: int, M: np.ndarray):
        k = M.shape[0]
        for i in range(k):
            for j in range(i, k):
                if M[i, j] != 0:
                    lines.append(f"{mat_no} {blk} {i + 1} {j + 1} {M[i, j]:.17g}")

    for b, (G0, Gk) in enumerate(blocks, start=1):
        k = G0.shape[0]
        emit(0, b, -G0)
        for v in range(n):
            emit(v + 1, b, Gk[:, v].reshape(k, k))
    if rows0:
        b = len(blocks) + 1
        emit(0, b, -np.diag(rows0))
        A = np.array(rowsa).reshape(len(rows0), n)
        for v in range(n):
            emit(v + 1, b, np.diag(A[:, v]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
