"""Command-line front end: ``iqcrate {certify,sweep,simulate,graph-bounds,iqc-verify}``.

Exit codes: 0 success, 2 configuration error, 3 solver inconclusive,
4 simulation failure.  The JSON scenario schema is documented in README.md.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import graph_tools as gt
from .fields_sim import (CompositePotential, SimulationError, affine_equilibrium, empirical_zf_check,
                         estimate_rate, flocking_initial_state, shift_inequality_check, quadratic_field,
                         random_quadratic_field, simulate_lpv, simulate_network, write_trajectory_csv)
from .lmi_assembly import FlockingModel, assemble_rate_lmi_lpv
from .rate_certifier import (BisectOptions, StabilityMarginError, sweep_L, write_certificate,
                             write_rate_csv)
from .sdp_interface import Status, write_sdpa
from .ss_core import StateSpace, from_tf, gradient_flow_channel
from .zf_multiplier import DEFAULT_LAMBDA_GRID, MultiplierClass, PValues, ZFConfig

log = logging.getLogger("iqcrate")

EXIT_OK, EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_SIM = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- scenario parsing -------------------------------------------------------

def _plant(spec: dict) -> StateSpace:
    if "tf" in spec:
        return from_tf(spec["tf"]["num"], spec["tf"]["den"])
    if "ss" in spec:
        return StateSpace.from_dict(spec["ss"])
    if "gradient_flow" in spec:
        return gradient_flow_channel(int(spec["gradient_flow"].get("d", 1)))
    raise ConfigError("plant needs one of 'tf', 'ss', 'gradient_flow', 'lpv' or 'flocking'")


@dataclass
class Scenario:
    raw: dict
    vertices: list
    rho_values: list | None
    flocking: FlockingModel | None
    m: float | None
    L: float | None
    d: int

    @property
    def plant(self) -> StateSpace:
        return self.vertices[0]


def _sector_from(raw: dict) -> tuple[float | None, float | None]:
    fld, graph = raw.get("field", {}), raw.get("graph")
    direct = "m" in fld or "L" in fld
    if direct and graph and "m_psi" in graph:
        raise ConfigError("give either field m, L or a graph with m_psi, L_psi, not both")
    if direct:
        m, L = float(fld["m"]), float(fld["L"])
    elif graph and "m_psi" in graph:
        m, L = _graph_bounds(graph)
    elif "hessian" in fld:
        ev = np.linalg.eigvalsh(np.atleast_2d(np.asarray(fld["hessian"], dtype=float)))
        m, L = float(ev[0]), float(ev[-1])
    else:
        return None, None
    if not 0 < m <= L:
        raise ConfigError(f"need 0 < m <= L, got m={m}, L={L}")
    return m, L


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return scenario_from_dict(raw)


def scenario_from_dict(raw: dict) -> Scenario:
    if "plant" not in raw:
        raise ConfigError("config has no 'plant' section")
    spec = raw["plant"]
    rho_values = None
    flock = None
    try:
        if "lpv" in spec:
            vertices = [_plant(v) for v in spec["lpv"]["vertices"]]
            rho_values = spec["lpv"].get("rho")
        elif "flocking" in spec:
            fs = dict(spec["flocking"])
            flock = FlockingModel(**fs)
            vertices = [flock.plant()]
        else:
            vertices = [_plant(spec)]
        m, L = _sector_from(raw)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid plant or field: {exc}") from None
    d = vertices[0].m
    return Scenario(raw, vertices, rho_values, flock, m, L, d)


def _graph(spec: dict) -> gt.InteractionGraph:
    if "file" in spec:
        g = gt.read_graph(spec["file"])
        if "informed" in spec:
            g = g.with_informed([i - 1 for i in spec["informed"]])
        return g
    kind = spec.get("kind")
    if kind is None:
        raise ConfigError("graph needs 'file' or 'kind'")
    if "edges" in spec and kind == "edges":
        return gt.InteractionGraph.from_edges(spec["N"], [(i - 1, j - 1) for i, j in spec["edges"]],
                                              [i - 1 for i in spec.get("informed", [])])
    return gt.generate(kind, int(spec["N"]), [i - 1 for i in spec.get("informed", [])])


def _graph_bounds(spec: dict) -> tuple[float, float]:
    g = _graph(spec)
    m_psi, L_psi = float(spec["m_psi"]), float(spec["L_psi"])
    if "d_max" in spec:
        return gt.structural_bounds(g, int(spec["d_max"]), m_psi, L_psi)
    res = gt.sector_constants(g, m_psi, L_psi)
    if res is None:
        raise ConfigError("Assumption path-to-informed violated: some agent has no path to an informed agent")
    return res


def _mult(raw: dict):
    ms = raw.get("multiplier", {})
    classes = ms.get("classes", ["CC", "causal", "anticausal", "noncausal"])
    try:
        classes = [MultiplierClass(c) for c in classes]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    default_nu = 5 if "lpv" in raw["plant"] else 3
    return classes, ms.get("lambda_grid", list(DEFAULT_LAMBDA_GRID)), int(ms.get("nu_max", default_nu))


def _bisect(raw: dict) -> BisectOptions:
    run = raw.get("run", {})
    opts = BisectOptions()
    if "bisect_tol" in run:
        opts.tol = float(run["bisect_tol"])
    opts.hi = float(run.get("alpha_hi", opts.hi))
    return opts


# -- commands ---------------------------------------------------------------

def _rate_rows(sc: Scenario, L_grid, jobs: int):
    if sc.m is None:
        raise ConfigError("rate commands need a sector: field m, L or a graph with m_psi, L_psi")
    classes, lams, nu_max = _mult(sc.raw)
    opts = _bisect(sc.raw)
    return sweep_L(sc.vertices, sc.m, L_grid, classes, lams, nu_max, opts, jobs)


def _inconclusive_at_zero(rows) -> bool:
    for r in rows:
        cert = r["certificate"]
        if not cert.certified and cert.bracket_history and cert.bracket_history[0][1] == Status.INCONCLUSIVE:
            return True
    return False


def _dump(sc: Scenario, row: dict, out: Path):
    cert = row["certificate"]
    if not cert.certified or cert.multiplier is None:
        return
    c = cert.multiplier["config"]
    cfg = ZFConfig(c["nu"], c["lam"], 0.0, c["class"])
    prob = assemble_rate_lmi_lpv(sc.vertices, sc.m, row["L"], sc.d, cert.alpha_star, cfg)
    write_sdpa(prob, str(out / f"rate_L{row['L']:g}_{row['class']}.dat-s"))


def _summary(rows):
    for r in rows:
        a = r["alpha_star"]
        a = "not certified" if a is None else f"{a:.4f}"
        print(f"L={r['L']:g} class={r['class']:<10} nu={r['nu']} lambda={r['lambda']:g} alpha*={a}")


def cmd_certify(args, sc: Scenario) -> int:
    out = Path(args.out)
    rows = _rate_rows(sc, [sc.L], args.jobs)
    write_rate_csv(rows, out / "rates.csv")
    for r in rows:
        write_certificate(r["certificate"], str(out / f"certificate_{r['class']}.json"),
                          {"m": sc.m, "L": sc.L, "class": r["class"]})
        if args.dump_sdpa:
            _dump(sc, r, out)
    _summary(rows)
    return EXIT_INCONCLUSIVE if _inconclusive_at_zero(rows) else EXIT_OK


def cmd_sweep(args, sc: Scenario) -> int:
    grid = sc.raw.get("run", {}).get("L_grid")
    if not grid:
        raise ConfigError("sweep needs run.L_grid")
    out = Path(args.out)
    rows = _rate_rows(sc, [float(v) for v in grid], args.jobs)
    write_rate_csv(rows, out / "sweep.csv")
    if args.dump_sdpa:
        for r in rows:
            _dump(sc, r, out)
    _summary(rows)
    return EXIT_INCONCLUSIVE if _inconclusive_at_zero(rows) else EXIT_OK


def _field(raw: dict, d: int, rng) -> "object":
    fld = raw.get("field", {})
    if "hessian" in fld:
        return quadratic_field(fld["hessian"], fld.get("y_opt", np.zeros(d)))
    if "m" in fld:
        return random_quadratic_field(d, float(fld["m"]), float(fld["L"]), rng,
                                      None if "y_opt" not in fld else np.asarray(fld["y_opt"], dtype=float))
    raise ConfigError("simulation needs field.hessian or field.m, field.L")


def _potential(raw: dict, field, N: int) -> CompositePotential:
    gspec = raw.get("graph")
    if not gspec or N == 1 and "kind" not in gspec and "file" not in gspec:
        return CompositePotential.independent(N, field)
    g = _graph(gspec)
    if g.N != N:
        raise ConfigError(f"graph has {g.N} nodes but run.N is {N}")
    kind = gspec.get("interaction", "laplacian_quadratic")
    if kind == "laplacian_quadratic":
        return CompositePotential.laplacian_quadratic(g, field, gspec.get("r"))
    if kind == "sigma_flocking":
        return CompositePotential.sigma_flocking(g, field, gspec.get("k", 1.0), gspec.get("dist", 1.0))
    if kind == "distance":
        return CompositePotential.distance(g, field, gspec.get("k", 1.0), gspec.get("dist", 1.0))
    raise ConfigError(f"unknown interaction {kind!r}")


def _schedule(spec: dict | None):
    if spec is None:
        return None
    kind = spec.get("kind", "square")
    lo, hi = float(spec["low"]), float(spec["high"])
    period = float(spec.get("period", 1.0))
    if kind == "square":
        return lambda t: hi if (t % period) < period / 2 else lo
    if kind == "constant":
        return lambda t: lo
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _simulate(sc: Scenario, rng):
    run = sc.raw.get("run", {})
    N = int(run.get("N", 1))
    d = sc.d
    field = _field(sc.raw, d, rng)
    pot = _potential(sc.raw, field, N)
    dt = float(run.get("dt", 1e-3))
    t_end = float(run.get("t_end", 50.0))
    every = int(run.get("record_every", 1))
    if sc.flocking is not None:
        x0 = np.asarray(run.get("x0", rng.standard_normal((N, sc.flocking.nx))), dtype=float)
        eta0 = flocking_initial_state(sc.flocking, x0)
        plant = sc.flocking
    else:
        n = sc.plant.n * N
        eta0 = np.asarray(run["eta0"], dtype=float) if "eta0" in run else rng.standard_normal(n)
        plant = sc.plant
    if len(sc.vertices) > 1:
        rho = _schedule(run.get("rho_schedule"))
        if rho is None or sc.rho_values is None:
            raise ConfigError("LPV simulation needs plant.lpv.rho and run.rho_schedule")
        traj = simulate_lpv(sc.vertices, sc.rho_values, rho, N, pot, eta0, t_end, dt, every)
    else:
        traj = simulate_network(plant, N, pot, eta0, t_end, dt, every)
    return traj, pot, plant, N


def _y_star(sc, pot, plant, N, traj):
    if "y_star" in sc.raw.get("run", {}):
        return np.asarray(sc.raw["run"]["y_star"], dtype=float)
    if pot.affine() is not None and len(sc.vertices) == 1:
        return affine_equilibrium(plant, N, pot)[1]
    if pot.field.y_opt is not None and pot.kind == "none":
        return np.tile(pot.field.y_opt, N)
    return traj.y[-1]


def cmd_simulate(args, sc: Scenario) -> int:
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    try:
        traj, pot, plant, N = _simulate(sc, rng)
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        with open(out / "simulation_report.json", "w") as fh:
            json.dump({"converged": False, "failure": str(exc), "t_fail": exc.t}, fh, indent=2)
        return EXIT_SIM
    write_trajectory_csv(traj, out / "trajectory.csv")
    y_star = _y_star(sc, pot, plant, N, traj)
    fit = estimate_rate(traj, y_star)
    gnorm = float(np.linalg.norm(pot.grad(traj.y[-1])))
    report = {"converged": fit.ok, "alpha_emp": fit.alpha if fit.ok else None,
              "kappa_emp": fit.kappa if fit.ok else None, "fit_residual": fit.residual if fit.ok else None,
              "oscillatory": fit.oscillatory, "no_fit_reason": fit.reason or None,
              "final_grad_norm": gnorm, "y_final": traj.y[-1].tolist(), "y_star": np.asarray(y_star).tolist(),
              "seed": args.seed}
    with open(out / "simulation_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    state = f"alpha_emp={fit.alpha:.4f}" if fit.ok else f"no fit ({fit.reason})"
    print(f"simulated {len(traj.t)} samples; {state}; |grad f(y_end)|={gnorm:.3e}")
    return EXIT_OK


def cmd_graph_bounds(args, sc_raw: dict) -> int:
    gspec = dict(sc_raw.get("graph", {}))
    if args.graph:
        gspec["file"] = args.graph
    for key, val in (("m_psi", args.m_psi), ("L_psi", args.L_psi), ("d_max", args.d_max)):
        if val is not None:
            gspec[key] = val
    if "m_psi" not in gspec or "L_psi" not in gspec:
        raise ConfigError("graph-bounds needs m_psi and L_psi")
    try:
        m, L = _graph_bounds(gspec)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    print(f"m={m:.4f} L={L:.4f}")
    with open(Path(args.out) / "graph_bounds.csv", "w") as fh:
        fh.write("m,L\n")
        fh.write(f"{m:.10g},{L:.10g}\n")
    return EXIT_OK


def cmd_iqc_verify(args, sc: Scenario) -> int:
    if not args.certificate:
        raise ConfigError("iqc-verify needs --certificate")
    with open(args.certificate) as fh:
        cert = json.load(fh)
    if not cert.get("certified"):
        raise ConfigError("certificate file does not hold a certified rate")
    c, vals = cert["multiplier"]["config"], cert["multiplier"]["values"]
    pv = PValues(vals["H"], vals["c"], vals["a"])
    alpha = float(cert["alpha_star"])
    m, L = float(cert.get("m", sc.m)), float(cert.get("L", sc.L))
    rng = np.random.default_rng(args.seed)
    run = sc.raw.get("run", {})
    runs = int(run.get("audit_runs", 5))
    results, ok = [], True
    lpv = len(sc.vertices) > 1
    if lpv:
        if sc.rho_values is None:
            raise ConfigError("LPV audits need plant.lpv.rho")
        rho = _schedule(run.get("rho_schedule") or {"low": min(sc.rho_values), "high": max(sc.rho_values)})
    t_end, dt = float(run.get("t_end", 50.0 / max(alpha, 0.05))), float(run.get("dt", 1e-3))
    for k in range(runs):
        field = random_quadratic_field(sc.d, m, L, rng)
        pot = CompositePotential.independent(1, field)
        eta0 = rng.standard_normal(sc.plant.n)
        try:
            if lpv:
                traj = simulate_lpv(sc.vertices, sc.rho_values, rho, 1, pot, eta0, t_end, dt)
            else:
                traj = simulate_network(sc.plant, 1, pot, eta0, t_end, dt)
        except SimulationError as exc:
            print(f"simulation failed: {exc}", file=sys.stderr)
            return EXIT_SIM
        eq = [affine_equilibrium(G, 1, pot)[1] for G in sc.vertices]
        if any(not np.allclose(e, eq[0], atol=1e-9) for e in eq):
            raise ConfigError("vertex plants have different equilibria; the audit needs a common one")
        ys = eq[0]
        ytil = traj.y - ys
        util = traj.u - pot.grad(ys)
        audit = empirical_zf_check(traj.t, ytil, util, m, L, alpha, pv, float(c["lam"]))
        shift_min, energy = shift_inequality_check(traj.t, ytil, util, m, L, alpha)
        fit = estimate_rate(traj, ys)
        res = {"run": k, "min_integral": audit.min_integral, "energy": audit.energy,
               "zf_ok": audit.ok(), "shift_min": shift_min, "shift_ok": shift_min >= -1e-6 * energy,
               "alpha_emp": fit.alpha if fit.ok else None}
        ok &= res["zf_ok"] and res["shift_ok"]
        results.append(res)
        print(f"run {k}: min integral {audit.min_integral:.3e} (energy {audit.energy:.3e}), "
              f"shift min {shift_min:.3e}, alpha_emp {res['alpha_emp']}")
    with open(Path(args.out) / "iqc_verify.json", "w") as fh:
        json.dump({"alpha_star": alpha, "ok": bool(ok), "runs": results}, fh, indent=2)
    return EXIT_OK if ok else EXIT_SIM


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iqcrate", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON scenario file")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1, help="parallel solver processes for sweeps")
        p.add_argument("--dump-sdpa", action="store_true", help="write SDPA files of the certified LMIs")
        p.add_argument("-v", "--verbose", action="store_true")

    for name in ("certify", "sweep", "simulate"):
        common(sub.add_parser(name))
    gb = sub.add_parser("graph-bounds")
    common(gb, config_required=False)
    gb.add_argument("--graph", help="edge-list file")
    gb.add_argument("--m-psi", type=float)
    gb.add_argument("--L-psi", type=float)
    gb.add_argument("--d-max", type=int)
    iv = sub.add_parser("iqc-verify")
    common(iv)
    iv.add_argument("--certificate", help="certificate JSON written by 'certify'")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        if args.command == "graph-bounds":
            raw = {}
            if args.config:
                with open(args.config) as fh:
                    raw = json.load(fh)
            return cmd_graph_bounds(args, raw)
        sc = load_scenario(args.config)
        if args.command in ("certify", "sweep", "iqc-verify") and sc.m is None:
            raise ConfigError("rate commands need a sector: field m, L or a graph with m_psi, L_psi")
        handler = {"certify": cmd_certify, "sweep": cmd_sweep, "simulate": cmd_simulate,
                   "iqc-verify": cmd_iqc_verify}[args.command]
        return handler(args, sc)
    except (ConfigError, StabilityMarginError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
