"""Bisection on the rate, sweeps over the sector bound and stability margins."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .lmi_assembly import FlockingModel, assemble_flocking_lmi, assemble_rate_lmi_lpv, pvalues_from_assignment
from .sdp_interface import FeasibilityResult, SdpProblem, SolveOptions, Status, solve_feasibility
from .ss_core import StateSpace
from .zf_multiplier import DEFAULT_LAMBDA_GRID, MultiplierClass, ZFConfig

log = logging.getLogger(__name__)

__all__ = [
    "BisectOptions",
    "RateCertificate",
    "certify_rate",
    "certify_plant",
    "sweep_L",
    "stability_margin",
    "StabilityMarginError",
    "flocking_kd_threshold",
    "write_rate_csv",
    "certificate_to_dict",
    "write_certificate",
    "CSV_HEADER",
]

CSV_HEADER = ("L", "class", "nu", "lambda", "alpha_star", "margin")
KAPPA_NOTE = "a prefactor kappa >= 0 exists with |y(t) - y*| <= kappa exp(-alpha t); it is not computed"


def default_bisect_tol() -> float:
    raw = os.environ.get("IQCRATE_BISECT_TOL")
    return 1e-3 if raw is None else float(raw)


@dataclass
class BisectOptions:
    tol: float = field(default_factory=default_bisect_tol)
    hi: float = 1.0
    max_doublings: int = 64
    solve: SolveOptions = field(default_factory=SolveOptions)


@dataclass
class RateCertificate:
    certified: bool
    alpha_star: float | None
    multiplier: dict | None = None
    storage: np.ndarray | None = None
    margins: dict = field(default_factory=dict)
    bracket_history: list = field(default_factory=list)
    kappa_note: str = KAPPA_NOTE
    infeasible_above: float | None = None

    @property
    def min_margin(self) -> float:
        return min(self.margins.values(), default=math.nan)


def certify_rate(builder: Callable[[float], SdpProblem], opts: BisectOptions | None = None) -> RateCertificate:
    """Largest ``alpha`` (to ``opts.tol``) at which ``builder(alpha)`` is verified feasible.

    Inconclusive probes count as infeasible and are marked in the trace.
    """
    opts = opts or BisectOptions()
    trace: list[tuple[float, str]] = []

    def probe(alpha: float) -> tuple[FeasibilityResult, SdpProblem]:
        prob = builder(alpha)
        res = solve_feasibility(prob, opts.solve)
        trace.append((alpha, res.status))
        if res.status == Status.INCONCLUSIVE:
            log.info("alpha=%g inconclusive (%s), treated as infeasible", alpha, res.diagnostic)
        return res, prob

    res0, prob0 = probe(0.0)
    if not res0.feasible:
        return RateCertificate(False, None, bracket_history=trace)
    best, best_prob, lo = res0, prob0, 0.0
    hi = opts.hi
    for _ in range(opts.max_doublings + 1):
        r, p = probe(hi)
        if not r.feasible:
            break
        best, best_prob, lo = r, p, hi
        hi *= 2
    else:
        raise RuntimeError(f"rate still feasible at alpha={lo:g} after {opts.max_doublings} doublings")
    while hi - lo > opts.tol:
        mid = 0.5 * (lo + hi)
        r, p = probe(mid)
        if r.feasible:
            best, best_prob, lo = r, p, mid
        else:
            hi = mid
    cfg: ZFConfig | None = best_prob.meta.get("cfg")
    mult = None
    if cfg is not None:
        mult = {"config": cfg.with_alpha(lo).to_dict(),
                "values": pvalues_from_assignment(best.assignment, cfg).to_dict()}
    storage = best.assignment.get("X")
    return RateCertificate(True, lo, mult, storage, dict(best.report.margins), trace, infeasible_above=hi)


def certify_plant(plants: StateSpace | Sequence[StateSpace], m: float, L: float, cfg: ZFConfig,
                  d: int | None = None, opts: BisectOptions | None = None) -> RateCertificate:
    """Bisection for one plant (or an LPV vertex list) and one multiplier configuration."""
    verts = [plants] if isinstance(plants, StateSpace) else list(plants)
    d = verts[0].m if d is None else d
    return certify_rate(lambda a: assemble_rate_lmi_lpv(verts, m, L, d, a, cfg), opts)


def _configs(cls: MultiplierClass, lambda_grid: Iterable[float], nu_max: int) -> list[ZFConfig]:
    cls = MultiplierClass(cls)
    if cls is MultiplierClass.CC:
        return [ZFConfig()]
    return [ZFConfig(nu, lam, 0.0, cls) for lam in lambda_grid for nu in range(1, nu_max + 1)]


def _sweep_task(args):
    verts, m, L, cfg, opts = args
    cert = certify_plant(verts, m, L, cfg, opts=opts)
    return (L, cfg), cert


# classes whose multiplier sets are contained in the key class
_SUBCLASSES = {
    MultiplierClass.CC: (),
    MultiplierClass.CAUSAL: (MultiplierClass.CC,),
    MultiplierClass.ANTICAUSAL: (MultiplierClass.CC,),
    MultiplierClass.NONCAUSAL: (MultiplierClass.CC, MultiplierClass.CAUSAL, MultiplierClass.ANTICAUSAL),
}


def _run(tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return dict(ex.map(_sweep_task, tasks))
    return dict(map(_sweep_task, tasks))


def sweep_L(plants: StateSpace | Sequence[StateSpace], m: float, L_grid: Sequence[float],
            classes: Sequence[str | MultiplierClass] = ("CC", "causal", "anticausal", "noncausal"),
            lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID, nu_max: int = 3,
            opts: BisectOptions | None = None, jobs: int = 1) -> list[dict]:
    """Best certified rate per ``(L, class)`` over the pole grid and orders up to ``nu_max``.

    Multiplier sets are nested (CC inside causal and anti-causal, both inside
    non-causal), so the best of a class also ranges over its subclasses.
    Each row keeps the ``(nu, lambda)`` attaining the maximum and the full
    per-configuration results under ``"all"``.
    """
    if not len(L_grid) or not len(classes) or not len(lambda_grid):
        raise ValueError("grids must be non-empty")
    verts = [plants] if isinstance(plants, StateSpace) else list(plants)
    classes = [MultiplierClass(c) for c in classes]
    needed = set(classes)
    for c in classes:
        needed.update(_SUBCLASSES[c])
    tasks = [(verts, m, float(L), cfg, opts) for L in L_grid for c in sorted(needed, key=lambda c: c.value)
             for cfg in _configs(c, lambda_grid, nu_max)]
    results = _run(tasks, jobs)
    rows = []
    for L in L_grid:
        L = float(L)
        for c in classes:
            cands = [(cfg, cert) for (LL, cfg), cert in results.items()
                     if LL == L and (cfg.cls is c or cfg.cls in _SUBCLASSES[c])]
            cands.sort(key=lambda t: (t[0].cls.value, t[0].nu, t[0].lam))
            best_cfg, best = max(cands, key=lambda t: -1.0 if t[1].alpha_star is None else t[1].alpha_star)
            rows.append({
                "L": L, "class": c.value, "nu": best_cfg.nu,
                "lambda": best_cfg.lam if best_cfg.nu else math.nan,
                "alpha_star": best.alpha_star, "margin": best.min_margin if best.certified else math.nan,
                "certificate": best,
                "all": [(cfg.to_dict(), cert.alpha_star) for cfg, cert in cands],
            })
    return rows


class StabilityMarginError(ValueError):
    pass


def _stable_at(verts, m, L, configs, sopts) -> bool:
    d = verts[0].m
    for cfg in configs:
        if solve_feasibility(assemble_rate_lmi_lpv(verts, m, L, d, 0.0, cfg), sopts).feasible:
            return True
    return False


def stability_margin(plants: StateSpace | Sequence[StateSpace], m: float, cls: str | MultiplierClass,
                     lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID, nu_max: int = 3,
                     L_lo: float | None = None, L_hi: float = 10.0, tol: float = 1e-2,
                     sopts: SolveOptions | None = None) -> float:
    """Largest ``L`` (to ``tol``) for which some multiplier of the class certifies ``alpha = 0``."""
    verts = [plants] if isinstance(plants, StateSpace) else list(plants)
    cls = MultiplierClass(cls)
    configs = list(_configs(cls, lambda_grid, nu_max))
    for sub in _SUBCLASSES[cls]:
        configs += _configs(sub, lambda_grid, nu_max)
    sopts = sopts or SolveOptions()
    lo = m if L_lo is None else L_lo
    if not _stable_at(verts, m, lo, configs, sopts):
        raise StabilityMarginError(f"stability is not certified at the lower end L={lo:g}")
    if _stable_at(verts, m, L_hi, configs, sopts):
        raise StabilityMarginError(f"stability is still certified at the upper end L={L_hi:g}")
    hi = L_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _stable_at(verts, m, mid, configs, sopts):
            lo = mid
        else:
            hi = mid
    return lo


def flocking_kd_threshold(model: FlockingModel, lo: float = 0.0, hi: float = 10.0, tol: float = 0.1,
                          sopts: SolveOptions | None = None) -> tuple[float, float]:
    """Bracket ``(infeasible k_d, feasible k_d)`` of width at most ``tol`` for the flocking LMI."""
    sopts = sopts or SolveOptions()

    def ok(kd: float) -> bool:
        return solve_feasibility(assemble_flocking_lmi(model.with_kd(kd)), sopts).feasible

    if ok(lo):
        raise StabilityMarginError(f"flocking LMI already feasible at k_d={lo:g}")
    if not ok(hi):
        raise StabilityMarginError(f"flocking LMI still infeasible at k_d={hi:g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def write_rate_csv(rows: Sequence[dict], path_or_file) -> None:
    """CSV with header ``L,class,nu,lambda,alpha_star,margin``; uncertified rates read ``nan``."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in CSV_HEADER])
    finally:
        if own:
            fh.close()


def certificate_to_dict(cert: RateCertificate) -> dict:
    """Plain-JSON view of a certificate (schema documented in the README)."""
    return {
        "certified": cert.certified,
        "alpha_star": cert.alpha_star,
        "infeasible_above": cert.infeasible_above,
        "multiplier": cert.multiplier,
        "storage": None if cert.storage is None else np.asarray(cert.storage).tolist(),
        "margins": cert.margins,
        "min_margin": None if not cert.margins else cert.min_margin,
        "bracket_history": [{"alpha": a, "status": s} for a, s in cert.bracket_history],
        "kappa_note": cert.kappa_note,
    }


def write_certificate(cert: RateCertificate, path: str, extra: dict | None = None) -> None:
    doc = certificate_to_dict(cert)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
