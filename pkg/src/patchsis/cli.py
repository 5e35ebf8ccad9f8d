"""Command line entry point.

    patchsis <simulate|analyze|optimize|verify> --config FILE --out DIR
             [--mode ode|stochastic] [--seed N] [--replicas K]
             [--budget C | --budget-grid a:b:steps]

Every command reads one scenario JSON and writes its artifacts (CSV/JSON,
plus rendered PNG figures on the report paths) under --out together with a
manifest.  Exit codes: 0 ok, 1 schema error, 2 assumption violation,
3 numerical failure.  PATCHSIS_THREADS caps worker parallelism.
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import plots
from .equilibria import classify, classify_reduced
from .errors import (AssumptionViolated, NonIrreducible, PatchsisError,
                     SchemaError)
from .intervene import budget_sweep, naive_allocation, solve_gp
from .model import SystemState, assemble_F, assemble_L, make_full_rhs
from .network import stationary_distribution, validate_strong_connectivity
from .scenario import load_scenario
from .simulate import integrate_ode, run_ensemble, simulate_stochastic
from .stability import check_conditions

__version__ = "0.1.0"


def _describe_version():
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def _threads():
    raw = os.environ.get("PATCHSIS_THREADS", "").strip()
    if not raw:
        return None
    try:
        val = int(raw)
    except ValueError:
        return None
    return val if val > 0 else None


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir, command, config_path, seeds, outputs):
    manifest = {
        "command": command,
        "config": {"path": Path(config_path).name,
                   "sha256": _sha256(config_path)},
        "version": _describe_version(),
        "seeds": seeds,
        "outputs": sorted(outputs),
    }
    _write_json(out_dir / "manifest.json", manifest)


def _require_rates(scenario):
    if scenario.rates is None:
        raise SchemaError("rates", "this command needs a rates section")
    return scenario.rates


def _initial_infected(counts, p0):
    """Round p0-fraction of each patch count to whole individuals."""
    m, n = counts.shape
    grid = p0.reshape(m, n)
    inf = np.rint(grid * counts).astype(np.int64)
    return np.minimum(inf, counts)


def _cmd_simulate(args, scenario, out_dir):
    r = _require_rates(scenario)
    sim = scenario.simulation
    mode = args.mode or sim.mode
    seed = sim.seed if args.seed is None else args.seed
    replicas = sim.replicas if args.replicas is None else args.replicas
    outputs = []
    if mode == "ode":
        x0 = sim.initial_x(scenario.d)
        s0 = SystemState(sim.p0.copy(), x0)
        rhs = make_full_rhs(scenario.d, r)
        traj = integrate_ode(rhs, s0, sim.t_end, step=sim.step,
                             store_every=sim.store_every, d=scenario.d)
        traj.to_csv(out_dir / "trajectory.csv")
        outputs.append("trajectory.csv")
        plots.trajectory_figure(traj, out_dir / "trajectory.png",
                                title=scenario.name)
        plots.layer_trajectory_figure(traj, out_dir / "layers.png",
                                      title=scenario.name)
        outputs += ["trajectory.png", "layers.png"]
        seeds = {}
    else:
        if sim.counts is None:
            raise SchemaError("simulation.counts",
                              "stochastic mode needs per-layer counts")
        infected0 = _initial_infected(sim.counts, sim.p0)
        trajectories = run_ensemble(
            scenario.d, r, sim.counts, infected0, sim.t_end, dt=sim.dt,
            seed=seed, replicas=replicas, max_workers=_threads(),
            store_every=sim.store_every)
        for k, traj in enumerate(trajectories):
            name = f"trajectory_r{k:03d}.csv"
            traj.to_csv(out_dir / name)
            outputs.append(name)
        plots.trajectory_figure(trajectories, out_dir / "trajectory.png",
                                title=scenario.name)
        outputs.append("trajectory.png")
        seeds = {"base": seed, "replicas": replicas}
    _write_manifest(out_dir, "simulate", args.config, seeds, outputs)
    return 0


def _cmd_analyze(args, scenario, out_dir):
    r = _require_rates(scenario)
    connected = validate_strong_connectivity(scenario.d)
    if all(connected):
        report = classify(scenario.d, r)
        checklist = check_conditions(scenario.d, r)
        stability = checklist.to_json_dict()
        routed = "full"
    else:
        report = classify_reduced(scenario.d, r)
        stability = None
        routed = "reduced"
    doc = {
        "name": scenario.name,
        "analysis": routed,
        "strongly_connected": connected,
        "equilibrium": report.to_json_dict(),
        "stability": stability,
    }
    _write_json(out_dir / "analysis.json", doc)
    _write_manifest(out_dir, "analyze", args.config, {}, ["analysis.json"])
    print(f"{scenario.name}: regime={report.regime} mu={report.mu:.6g} "
          f"r0={report.r0:.6g} ({routed} analysis)")
    return 0


def _parse_grid(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise SchemaError("--budget-grid", "expected a:b:steps")
    try:
        a, b, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise SchemaError("--budget-grid", "expected a:b:steps") from exc
    if steps < 1 or b <= a or a < 0:
        raise SchemaError("--budget-grid", "need 0 <= a < b and steps >= 1")
    return np.linspace(a, b, steps)


def _cmd_optimize(args, scenario, out_dir):
    spec = scenario.intervention
    if spec is None:
        raise SchemaError("intervention", "missing required section")
    grid = _parse_grid(args.budget_grid) if args.budget_grid is not None \
        else spec.budget_grid
    outputs = []
    if grid is not None and args.budget is None:
        rows = budget_sweep(spec.problem(scenario.d, grid[-1]), grid)
        with open(out_dir / "sweep.csv", "w") as fh:
            fh.write("C,mu_gp,mu_naive,used_gp,used_naive\n")
            for row in rows:
                fh.write(",".join("%.12g" % row[k] for k in
                                  ("C", "mu_gp", "mu_naive",
                                   "used_gp", "used_naive")) + "\n")
        outputs.append("sweep.csv")
        plots.sweep_figure(rows, out_dir / "sweep.png", title=scenario.name)
        outputs.append("sweep.png")
        final = rows[-1]
        doc = {"name": scenario.name,
               "budget_grid": [float(c) for c in grid],
               "gp": final["gp"].to_json_dict(),
               "naive": final["naive"].to_json_dict()}
        print(f"{scenario.name}: swept {len(rows)} budgets, final "
              f"mu_gp={final['mu_gp']:.6g} mu_naive={final['mu_naive']:.6g}")
    else:
        problem = spec.problem(scenario.d, args.budget)
        gp = solve_gp(problem)
        naive = naive_allocation(problem)
        doc = {"name": scenario.name,
               "gp": gp.to_json_dict(),
               "naive": naive.to_json_dict()}
        print(f"{scenario.name}: C={problem.budget:g} "
              f"mu_gp={gp.mu_achieved:.6g} mu_naive={naive.mu_achieved:.6g}")
    _write_json(out_dir / "intervention.json", doc)
    outputs.append("intervention.json")
    _write_manifest(out_dir, "optimize", args.config, {}, outputs)
    return 0


class _Battery:
    def __init__(self):
        self.results = []

    def check(self, name, ok, detail=""):
        self.results.append({"name": name, "pass": bool(ok), "detail": detail})
        tag = "PASS" if ok else "FAIL"
        print(f"{tag} {name}" + (f": {detail}" if detail else ""))

    @property
    def ok(self):
        return all(r["pass"] for r in self.results)


def _verify_battery(scenario, seed):
    """Built-in invariant battery: structural identities, short integrations,
    and (when configured) the optimization certificate."""
    bat = _Battery()
    d = scenario.d
    rng = np.random.default_rng(seed)
    connected = validate_strong_connectivity(d)

    for a, g in enumerate(d.layers):
        worst = float(np.abs(g.q.sum(axis=1)).max())
        bat.check(f"generator-rows layer{a + 1}", worst <= 1e-12,
                  f"max |row sum| = {worst:.2e}")
        if connected[a]:
            pi = stationary_distribution(g)
            res = float(np.abs(g.q.T @ pi).max())
            tot = abs(float(pi.sum()) - 1.0)
            bat.check(f"stationarity layer{a + 1}",
                      res <= 1e-10 and tot <= 1e-12,
                      f"residual {res:.2e}, mass gap {tot:.2e}")
        else:
            bat.check(f"stationarity layer{a + 1}", True,
                      "skipped (layer is not strongly connected)")

    for trial in range(3):
        x = rng.uniform(0.2, 2.0, d.n * d.m)
        lmat = assemble_L(d, x).dense()
        worst = float(np.abs(lmat.sum(axis=1)).max())
        bat.check(f"coupling-rows x{trial}", worst <= 1e-10,
                  f"max |L(x) 1| = {worst:.2e}")
        f = assemble_F(d, x)
        shares = f.fractions.sum(axis=0)
        bat.check(f"share-columns x{trial}",
                  float(np.abs(shares - 1.0).max()) <= 1e-12,
                  "class shares sum to one")

    if scenario.rates is not None:
        r = scenario.rates
        sim = scenario.simulation
        x0 = sim.initial_x(d)
        s0 = SystemState(sim.p0.copy(), x0)
        traj = integrate_ode(make_full_rhs(d, r), s0, 2.0, step=sim.step, d=d)
        lo, hi = float(traj.p.min()), float(traj.p.max())
        bat.check("ode-simplex", -1e-9 <= lo and hi <= 1.0 + 1e-9,
                  f"p range [{lo:.3g}, {hi:.3g}]")
        drift = float(traj.metadata["mass_drift"])
        bat.check("ode-mass", drift <= 1e-9, f"relative drift {drift:.2e}")

        if all(connected):
            report = classify(d, r)
            agree = report.boundary or (
                (report.mu > 0) == (report.r0 > 1))
            bat.check("classification", agree,
                      f"regime {report.regime}, mu {report.mu:.4g}, "
                      f"r0 {report.r0:.4g}")
            checklist = check_conditions(d, r)
            consistent = (not checklist.sufficient_spectral
                          or report.regime != "endemic")
            bat.check("stability-consistency", consistent,
                      "spectral certificate agrees with the regime")
        else:
            report = classify_reduced(d, r)
            bat.check("classification", True,
                      f"reduced regime {report.regime} over "
                      f"{len(report.blocks)} block(s)")

        if sim.counts is not None:
            infected0 = _initial_infected(sim.counts, sim.p0)
            tr = simulate_stochastic(d, r, sim.counts, infected0,
                                     min(1.0, sim.t_end), dt=sim.dt,
                                     seed=seed, replica=0)
            tot0 = tr.counts_s[0] + tr.counts_i[0]
            tot1 = tr.counts_s[-1] + tr.counts_i[-1]
            conserved = np.array_equal(tot0.reshape(d.m, d.n).sum(axis=1),
                                       tot1.reshape(d.m, d.n).sum(axis=1))
            bat.check("stochastic-conservation", conserved,
                      "per-layer totals unchanged")

    if scenario.intervention is not None:
        spec = scenario.intervention
        budget = spec.budget
        if budget is None and spec.budget_grid is not None:
            budget = float(spec.budget_grid[-1])
        if budget is not None:
            gp = solve_gp(spec.problem(d, budget))
            gap = abs(gp.mu_achieved - gp.mu_eigen)
            bat.check("optimize-eigenvalue", gap <= 1e-6,
                      f"abscissa round trip gap {gap:.2e}")
            from .intervene import shift_transform
            shifted = shift_transform(d, spec.delta_upper)
            mat = shifted.matrix(gp.beta, spec.problem(d, budget).delta_to_dhat(gp.delta))
            ratio = float((mat @ gp.u / gp.u).max())
            cert = abs(ratio - gp.lambda_opt) / max(1.0, gp.lambda_opt)
            bat.check("optimize-certificate", cert <= 1e-6,
                      f"max ratio vs lambda gap {cert:.2e}")
    return bat


def _cmd_verify(args, scenario, out_dir):
    seed = scenario.simulation.seed if args.seed is None else args.seed
    bat = _verify_battery(scenario, seed)
    if out_dir is not None:
        _write_json(out_dir / "verify.json",
                    {"name": scenario.name, "checks": bat.results,
                     "ok": bat.ok})
        _write_manifest(out_dir, "verify", args.config, {"base": seed},
                        ["verify.json"])
    print(f"{'OK' if bat.ok else 'FAILED'} {scenario.name}: "
          f"{sum(r['pass'] for r in bat.results)}/{len(bat.results)} checks")
    return 0 if bat.ok else 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="patchsis",
        description="Multi-layer patch SIS epidemics: simulate, analyze, "
                    "optimize, verify.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
            ("simulate", "integrate the ODE or run the stochastic ensemble"),
            ("analyze", "equilibrium classification and stability checklist"),
            ("optimize", "budgeted rate intervention"),
            ("verify", "run the built-in invariant battery")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", required=(name != "verify"),
                       help="output directory for artifacts")
        p.add_argument("--seed", type=int, default=None)
        if name == "simulate":
            p.add_argument("--mode", choices=("ode", "stochastic"),
                           default=None)
            p.add_argument("--replicas", type=int, default=None)
        if name == "optimize":
            p.add_argument("--budget", type=float, default=None)
            p.add_argument("--budget-grid", dest="budget_grid", default=None,
                           help="a:b:steps")
    return parser


_COMMANDS = {"simulate": _cmd_simulate, "analyze": _cmd_analyze,
             "optimize": _cmd_optimize, "verify": _cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.config)
        out_dir = None
        if args.out is not None:
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](args, scenario, out_dir)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    except (AssumptionViolated, NonIrreducible) as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return 2
    except PatchsisError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def entry():
    sys.exit(main(argv=None))


if __name__ == "__main__":
    sys.exit(main())
