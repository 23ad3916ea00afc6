"""Command-line driver.

Usage::

    activesusp <command> [--config PATH] [--out DIR] [--workers K] [--seed S]

Commands: ``gen``, ``corrector``, ``effective``, ``dilute``, ``micro``,
``macro``, ``twoscale``, ``verify``.  Every run writes the resolved
configuration to ``<out>/config.resolved.json``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig
from .correctors import solve_active_corrector, write_corrector
from .dilute import dilute_report, pusher_puller_shear, einstein_compare, dilute_Bpas1
from .effective import (active_stress_sample, bact_function, bact_sample, bbar_sample, bpas_sample,
                        bpas_sample_stresslet, compute_effective_tensors, fbar_sample, linearize_Bact,
                        passive_basis_correctors)
from .ensemble import sample_hardcore, save_ensemble
from .forcing import SwimForceModel, evaluate_force
from .solvers import (ContractionError, base_cell, cell_tensors, delta_limit_experiment, micro_ensemble,
                      solve_macro, solve_micro, two_scale_experiment, write_table)
from .stokes import PeriodicField, PeriodicGrid, RigidStokesSolver, save_field
from .tensors import shear, to_coords

log = logging.getLogger("activesusp")

COMMANDS = ("gen", "corrector", "effective", "dilute", "micro", "macro", "twoscale", "verify")


def _provenance(cfg: RunConfig) -> dict:
    return {"config_sha256": cfg.digest(), "activesusp": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__}


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _queries(cfg: RunConfig):
    d = cfg.ensemble.d
    if cfg.physics.queries:
        return [np.asarray(E, float) for E in cfg.physics.queries]
    return [shear(d, cfg.physics.shear)]


def _ensembles(cfg: RunConfig):
    e = cfg.ensemble
    return [sample_hardcore(e.d, e.L, e.lambda1, e.ell, e.seed + k, margin=e.margin) for k in range(e.realizations)]


def _solver_options(cfg: RunConfig) -> dict:
    return {"maxiter": cfg.numerics.maxiter, "stall_window": cfg.numerics.stall_window}


# ------------------------------------------------------------------ commands

def cmd_gen(cfg: RunConfig, out: Path, workers: int) -> int:
    ok = True
    rows = []
    for ens in _ensembles(cfg):
        path = out / "ensembles" / f"ensemble_{ens.seed}.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_ensemble(path, ens)
        audit = ens.satisfies_hardcore()
        ok &= audit
        rows.append({"seed": ens.seed, "particles": len(ens), "number_density": ens.number_density,
                     "min_surface_distance": ens.min_surface_distance(), "hardcore_ok": audit})
        print(f"seed {ens.seed}: {len(ens)} particles, hardcore {'ok' if audit else 'VIOLATED'}")
    _dump(out / "ensembles" / "summary.json", {"realizations": rows, "provenance": _provenance(cfg)})
    return 0 if ok else 1


def cmd_corrector(cfg: RunConfig, out: Path, workers: int) -> int:
    ens = _ensembles(cfg)[0]
    grid = PeriodicGrid(ens.d, ens.L, cfg.numerics.N)
    solver = RigidStokesSolver(grid, ens, tol=cfg.numerics.tol, **_solver_options(cfg))
    cors = passive_basis_correctors(ens, grid, cfg.numerics.tol, solver=solver)
    base = out / "correctors"
    for a, c in enumerate(cors):
        write_corrector(base / f"passive_seed{ens.seed}_basis{a}", c)
    model = cfg.model()
    if model is not None:
        for q, E in enumerate(_queries(cfg)):
            act = solve_active_corrector(ens, model, E, grid, cfg.numerics.tol, solver=solver)
            write_corrector(base / f"active_seed{ens.seed}_query{q}", act)
    print(f"wrote {len(cors)} passive correctors to {base}")
    return 0


def cmd_effective(cfg: RunConfig, out: Path, workers: int) -> int:
    rep = compute_effective_tensors(_ensembles(cfg), cfg.numerics.N, cfg.model(), _queries(cfg),
                                    tol=cfg.numerics.tol, workers=workers,
                                    solver_options=_solver_options(cfg))
    rep.provenance.update(_provenance(cfg))
    rep.provenance["lambda1"] = cfg.ensemble.lambda1
    (out / "effective.json").write_text(rep.to_json() + "\n")
    print("B_pas =", np.array2string(np.asarray(rep.Bpas), precision=6))
    for q, E in enumerate(rep.queries):
        print(f"query {q}: E:B_act(E) = {float((E * rep.Bact_matrix(q)).sum()):.6g}")
    return 0


def cmd_dilute(cfg: RunConfig, out: Path, workers: int) -> int:
    dl, d = cfg.dilute, cfg.ensemble.d
    model = cfg.model()
    r = dl.r if dl.r is not None else (model.offset if model else 1.7)
    gamma = dl.gamma if dl.gamma is not None else (model.gamma if model else -1)
    fmag = dl.fmag if dl.fmag is not None else (model.fbar if model else 1.0)
    closed = pusher_puller_shear(gamma, r, fmag, dl.s, d)
    E = shear(d, dl.s)
    report = {"basis_dimension": d, "closed_form_shear_scalar": closed,
              "closed_form_inputs": {"gamma": gamma, "r": r, "fmag": fmag, "s": dl.s, "d": d},
              "Bpas1": dilute_Bpas1(d).tolist()}
    if model is not None:
        rep = dilute_report(model, E, cfg.physics.kappa, dl.lambda1, ell=dl.ell, eta=cfg.physics.eta,
                            threshold=cfg.physics.threshold)
        report["model"] = rep.to_dict()
    if dl.einstein_lambda1:
        fit = einstein_compare(dl.einstein_lambda1, dl.einstein_values, dilute_Bpas1(d), d)
        report["einstein"] = {"slope": np.asarray(fit.slope).tolist(),
                              "relative_deviation": fit.relative_deviation,
                              "slope_per_volume_fraction": fit.slope_per_volume_fraction}
    report["provenance"] = _provenance(cfg)
    _dump(out / "dilute.json", report)
    print(f"shear scalar (closed form) = {closed:.12g}")
    return 0


def _write_log(path: Path, lg) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("iteration", "increment", "relative_increment", "ratio"))
        for i, (inc, rel) in enumerate(zip(lg.increments, lg.relative)):
            w.writerow((i + 2, repr(inc), repr(rel), repr(lg.ratios[i - 1]) if i >= 1 else ""))


def cmd_micro(cfg: RunConfig, out: Path, workers: int) -> int:
    p = cfg.physics
    base = base_cell(cfg.ensemble.d, p.L0, cfg.ensemble.seed)
    ens = micro_ensemble(base, p.eps)
    N = int(round(cfg.numerics.micro_cells_per_radius / p.eps))
    sc = cfg.solver_config(N=N, ell=base.ell)
    grid = PeriodicGrid(ens.d, 1.0, N)
    sol, lg = solve_micro(ens, cfg.model(), sc, grid, **_solver_options(cfg))
    save_field(out / "micro.u.bin", PeriodicField(grid, sol.u))
    save_field(out / "micro.p.bin", PeriodicField(grid, sol.p))
    _write_log(out / "micro.iterations.csv", lg)
    _dump(out / "micro.json", {"iterations": lg.iterations, "converged": lg.converged,
                               "guaranteed": lg.guaranteed, "ratios": lg.ratios, "notes": lg.notes,
                               "gradient_energy": sol.gradient_energy(), "provenance": _provenance(cfg)})
    print(f"micro: {lg.iterations} iterations, last ratio {lg.ratio:.4g}")
    return 0 if lg.converged else 1


def cmd_macro(cfg: RunConfig, out: Path, workers: int) -> int:
    p = cfg.physics
    base = base_cell(cfg.ensemble.d, p.L0, cfg.ensemble.seed)
    model = cfg.model() if p.kappa else None
    cell = cell_tensors(base, int(round(cfg.numerics.micro_cells_per_radius * p.L0)), model,
                        tol=cfg.numerics.tol)
    N = int(round(cfg.numerics.micro_cells_per_radius / p.eps))
    grid = PeriodicGrid(base.d, 1.0, N)
    sol, lg = solve_macro(cell.Bpas, cell.bact, cfg.solver_config(N=N), grid,
                          volume_fraction=cell.volume_fraction, d=base.d)
    save_field(out / "macro.u.bin", PeriodicField(grid, sol.u))
    save_field(out / "macro.p.bin", PeriodicField(grid, sol.p))
    _write_log(out / "macro.iterations.csv", lg)
    _dump(out / "macro.json", {"iterations": lg.iterations, "converged": lg.converged,
                               "Bpas": cell.Bpas.tolist(), "volume_fraction": cell.volume_fraction,
                               "provenance": _provenance(cfg)})
    print(f"macro: {lg.iterations} iterations")
    return 0 if lg.converged else 1


def cmd_twoscale(cfg: RunConfig, out: Path, workers: int) -> int:
    p = cfg.physics
    model = cfg.model() if p.kappa else None
    sc = cfg.solver_config()
    rows, verdict = two_scale_experiment(p.eps_list, sc, model, seeds=(cfg.ensemble.seed,), L0=p.L0,
                                         workers=workers)
    write_table(out / "twoscale.csv", rows)
    if p.delta_list:
        pairs = list(zip(p.delta_list, p.eps_list))
        drows = delta_limit_experiment(pairs, sc, model, p.L0)
        write_table(out / "deltalimit.csv", drows, ("macro_gap", "s_exponent"))
    print(f"two-scale L2 gap strictly decreasing: {verdict}")
    return 0 if verdict else 1


# -------------------------------------------------------------------- verify

def verify_suite(cfg: RunConfig, workers: int = 1):
    """Run the invariant checks; returns a list of ``(name, passed, detail)``."""
    results = []

    def check(name, passed, detail):
        results.append((name, bool(passed), detail))

    tol = cfg.numerics.tol
    ensembles = _ensembles(cfg)
    check("hardcore", all(e.satisfies_hardcore() for e in ensembles),
          f"min gap {min(e.min_surface_distance() for e in ensembles):.4g} vs 2 ell = {2 * cfg.ensemble.ell:g}")
    model = cfg.model() or SwimForceModel()
    E = _queries(cfg)[0]
    d = cfg.ensemble.d
    grid = PeriodicGrid(d, cfg.ensemble.L, cfg.numerics.N)

    force = evaluate_force(model, ensembles[0], E, grid)
    hd = grid.cell_volume
    worst = 0.0
    for pf in force.particles:
        scale = float(np.abs(pf.values).sum()) * hd * max(1.0, float(np.abs(pf.disp).max()))
        net = np.abs(pf.values.sum(1) * hd).max()
        M = pf.values @ pf.disp * hd
        worst = max(worst, float(max(net, np.abs(M - M.T).max()) / scale))
    check("neutrality", worst <= 1e-12, f"max relative net force/torque {worst:.2e}")

    samples, all_cors = [], []
    for ens in ensembles:
        g = PeriodicGrid(d, ens.L, cfg.numerics.N)
        solver = RigidStokesSolver(g, ens, tol=tol, **_solver_options(cfg))
        cors = passive_basis_correctors(ens, g, tol, solver=solver)
        all_cors.append(cors)
        fs = evaluate_force(model, ens, E, g)
        act = solve_active_corrector(ens, model, E, g, tol, solver=solver)
        samples.append({"cors": cors, "force": fs, "active": act})

    div = max(max(c.flow.div_residual for c in s["cors"]) for s in samples)
    div = max(div, max(s["active"].flow.div_residual for s in samples))
    check("divergence-free", div <= 1e-8, f"max |div u| = {div:.2e}")
    rig = max(max(c.flow.rigid_residual for c in s["cors"]) for s in samples)
    check("rigidity", rig <= 10 * tol, f"max Galerkin rigidity residual {rig:.2e} (tol {tol:g})")

    B = np.array([bpas_sample(s["cors"]) for s in samples])
    Bm = B.mean(0)
    Bse = B.std(0, ddof=1) / np.sqrt(len(B)) if len(B) > 1 else np.zeros_like(Bm)
    asym = np.abs(Bm - Bm.T)
    check("Bpas symmetry", np.all(asym <= 3 * np.sqrt(Bse**2 + Bse.T**2) + 1e-12),
          f"max asymmetry {asym.max():.2e}")
    lam_min = float(np.linalg.eigvalsh(0.5 * (Bm + Bm.T)).min())
    check("Bpas positivity", lam_min >= 1.0 - 3 * float(Bse.max()) - 1e-12, f"min eigenvalue {lam_min:.6f}")

    Bs = np.array([bpas_sample_stresslet(s["cors"]) for s in samples])
    rel = float(np.abs(Bs - B).max() / np.abs(B).max())
    check("energy identity (passive, two routes)", rel <= 1e-6, f"relative gap {rel:.2e}")
    worst = 0.0
    for s in samples:
        a = s["active"]
        if a.force.particles:
            lhs, rhs = a.gradient_energy(), a.force_work()
            worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    check("energy identity (active, two routes)", worst <= 1e-6, f"relative gap {worst:.2e}")

    from .tensors import from_coords
    tr = 0.0
    for s in samples:
        for coords in (bact_sample(s["cors"], s["force"]), fbar_sample(s["force"])):
            tr = max(tr, abs(float(np.trace(from_coords(coords, d)))))
    check("trace-free Bact, F", tr <= 1e-10, f"max |trace| {tr:.2e}")

    ident = 0.0
    for s in samples:
        C, _ = active_stress_sample(s["active"])
        diff = bact_sample(s["cors"], s["force"]) - C - 0.5 * fbar_sample(s["force"])
        ident = max(ident, float(np.abs(diff).max()))
    check("Bact = C + F/2", ident <= 1e-6, f"max deviation {ident:.2e}")

    smooth = replace(model, orientation="fixed:" + ",".join(["1"] + ["0"] * (d - 1)), response="saturating")
    bact = bact_function(all_cors[0], smooth)
    F = shear(d, 1.0, 0, 1) if d == 2 else shear(d, 1.0, 1, 2)
    Ed = np.zeros((d, d))
    Ed[0, 0], Ed[1, 1] = 0.3, -0.3
    lin = linearize_Bact(bact, Ed, F + Ed, h=0.2, levels=3)
    ok = (not lin.inconclusive) and 1.5 <= lin.order <= 2.5
    check("linearize_Bact second order", ok, f"observed order {lin.order:.3f}")
    return results


def cmd_verify(cfg: RunConfig, out: Path, workers: int) -> int:
    t0 = time.time()
    results = verify_suite(cfg, workers)
    rows = []
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        rows.append({"check": name, "passed": passed, "detail": detail})
    _dump(out / "verify.json", {"checks": rows, "provenance": _provenance(cfg)})
    print(f"{sum(p for _, p, _ in results)}/{len(results)} checks passed in {time.time() - t0:.1f} s")
    return 0 if all(p for _, p, _ in results) else 1


HANDLERS = {"gen": cmd_gen, "corrector": cmd_corrector, "effective": cmd_effective, "dilute": cmd_dilute,
            "micro": cmd_micro, "macro": cmd_macro, "twoscale": cmd_twoscale, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="activesusp", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="JSON configuration (defaults apply when omitted)")
    ap.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    ap.add_argument("--workers", type=int, default=1, help="worker processes for independent realizations")
    ap.add_argument("--seed", type=int, help="base seed (overrides ensemble.seed)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
        if args.seed is not None:
            cfg.ensemble.seed = args.seed
        if args.workers < 1:
            raise ConfigError("--workers: must be at least 1")
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(cfg.to_json() + "\n")
    try:
        return HANDLERS[args.command](cfg, out, args.workers)
    except (ContractionError, ValueError, RuntimeError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
