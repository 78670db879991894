"""Command-line surface: defaults, observability, hum, optimize, verify, sweep.

Exit codes: 0 pass, 1 invariant-suite failure, 2 invalid configuration,
3 degenerate observation, 4 linear-solver failure, 5 optimizer failure.
"""

import argparse
import json
import sys
import time

import numpy as np

from . import observability as obs
from .actuator import (
    PlacementProblem,
    check_nash,
    mass_swap_probes,
    optimize_actuator,
    project_onto_theta,
    saddle_probes,
)
from .config import RunConfig, defaults_yaml
from .density import ActuatorDensity
from .dynamics import duality_terms
from .errors import (
    DegenerateObservationError,
    InvalidConfigError,
    IterationLimitError,
    OptimizerError,
    StochheatError,
)
from .hum import assemble_gram_operator, minimal_norm_over_admissible, solve_hum, verify_null_control
from .reports import (
    gram_csv_rows,
    make_report,
    theta_csv_rows,
    write_csv,
    write_report,
    write_theta_figure,
)
from .spectral import gram
from .tree import AdaptedField, NoiseCoefficient, TerminalData, TimeWindow


class Workspace:
    """All domain objects built once from a validated config."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.domain = config.domain()
        self.basis = config.basis(self.domain)
        self.tree = config.tree()
        self.noise = config.noise(self.tree)
        self.window = config.window()
        self.region = config.region(self.domain)
        self.grid = config.grid(self.domain)
        self.density = config.density(self.domain)
        self.y0 = config.y0(self.basis)


def cmd_observability(config: RunConfig):
    ws = Workspace(config)
    ocfg = config.data["observability"]
    seed = config.seed
    t0 = time.perf_counter()
    lam_max = float(ws.basis.eigenvalues[-1])
    lam_cut = ocfg["lambda_cutoff"]
    lam_cut = lam_max / 2.0 if lam_cut is None else float(lam_cut)
    t_index = ocfg["t_index"]
    t_index = ws.tree.steps // 2 if t_index is None else int(t_index)

    violations = obs.decay_violation_count(
        int(ocfg["decay_samples"]), lam_max, ws.noise, ws.tree, ws.basis, seed=seed
    )
    rng = np.random.default_rng(seed + 1)
    rows = 1 if ws.noise.is_zero else ws.tree.n_leaves
    eta = TerminalData(ws.tree, rng.standard_normal((rows, ws.basis.count)))
    k_interp = obs.check_interpolation(eta, ws.region, t_index, ws.noise, ws.tree, ws.basis)
    c_l2 = obs.l2_observability_constant(
        ws.region, ws.window, ws.noise, ws.tree, ws.basis,
        tol=float(config.data["solver"]["tol"]),
        dense_limit=int(config.data["solver"]["dense_limit"]),
    )
    c_l1 = obs.l1_observability_constant(
        ws.region, ws.window, ws.noise, ws.tree, ws.basis,
        restarts=int(config.data["solver"]["restarts"]),
        seed=seed + 2,
        ascent_steps=int(ocfg["ascent_steps"]),
        samples=int(ocfg["l1_samples"]),
    )
    report_obj = obs.ObservabilityReport(
        c_l2=float(c_l2),
        c_l1_lower=float(c_l1),
        k_interp=float(k_interp),
        decay_violations=int(violations),
        metadata={
            "J": ws.basis.count,
            "K": ws.tree.steps,
            "tau": ws.noise.tau,
            "region_measure": ws.region.measure,
            "window_measure": ws.window.measure,
            "lambda_cutoff": lam_cut,
            "t_index": t_index,
        },
    )
    passed = violations == 0 and np.isfinite(c_l2) and np.isfinite(c_l1)
    timings = {"total_s": time.perf_counter() - t0}
    report = make_report("observability", config, report_obj.as_dict(), passed, timings)
    out = config.data["out"]
    path = write_report(out, report)
    header, rows_csv = gram_csv_rows(ws.basis, gram(ws.basis, ws.region))
    write_csv(out, "gram", header, rows_csv, config.hash())
    return report, path, 0 if passed else 1


def cmd_hum(config: RunConfig):
    ws = Workspace(config)
    scfg = config.data["solver"]
    t0 = time.perf_counter()
    op = assemble_gram_operator(ws.density, ws.window, ws.noise, ws.tree, ws.basis)
    solution = solve_hum(
        ws.y0,
        op,
        eps_schedule=config.eps_schedule(),
        tol=float(scfg["tol"]),
        max_iter=int(scfg["max_iter"]),
        dense_limit=int(scfg["dense_limit"]),
    )
    recheck = verify_null_control(solution, ws.density, ws.noise, ws.tree, ws.basis)
    if solution.cost_N > 0:
        ok_min, min_detail = minimal_norm_over_admissible(
            solution, trials=int(scfg["min_norm_trials"]), seed=config.seed
        )
    else:
        ok_min, min_detail = True, {"checked": 0, "skipped": 0, "worst_increase": 0.0}
    results = solution.scalars()
    results.update(
        {
            "terminal_residual_recheck": float(recheck),
            "minimal_norm_ok": bool(ok_min),
            "minimal_norm_detail": min_detail,
        }
    )
    timings = {"total_s": time.perf_counter() - t0}
    report = make_report("hum", config, results, bool(ok_min), timings)
    out = config.data["out"]
    path = write_report(out, report)
    times = ws.tree.times()
    rows = [
        (k, times[k], solution.control_energy[k], solution.state_energy[k])
        for k in range(ws.tree.steps + 1)
    ]
    write_csv(out, "hum_levels", ["level", "t", "E_control_sq", "E_state_sq"], rows, config.hash())
    return report, path, 0 if ok_min else 1


def cmd_optimize(config: RunConfig):
    ws = Workspace(config)
    scfg = config.data["solver"]
    t0 = time.perf_counter()
    alpha = float(config.data["grid"]["alpha"])
    problem = PlacementProblem(
        ws.y0, ws.window, ws.noise, ws.tree, ws.basis, ws.grid, alpha,
        dense_limit=int(scfg["dense_limit"]),
    )
    theta_star, nash, game = optimize_actuator(
        ws.y0,
        ws.window,
        ws.noise,
        ws.tree,
        ws.basis,
        ws.grid,
        alpha,
        method=scfg["method"],
        tol=float(scfg["outer_tol"]),
        max_iter=int(scfg["outer_max_iter"]),
        problem=problem,
    )
    rel_gap = abs(game.gap) / max(abs(game.u_plus), 1e-300)
    passed = bool(nash.ok and rel_gap <= 1e-3)
    results = {
        "nash": nash.as_dict(),
        "game": game.as_dict(),
        "iterates": game.iterates,
    }
    timings = {"total_s": time.perf_counter() - t0}
    report = make_report("optimize", config, results, passed, timings)
    out = config.data["out"]
    path = write_report(out, report)
    header, rows = theta_csv_rows(theta_star)
    write_csv(out, "theta", header, rows, config.hash())
    write_theta_figure(out, theta_star, config.hash())
    return report, path, 0 if passed else 1


def _suite_duality(ws, config, corruption):
    vcfg = config.data["verify"]
    rng = np.random.default_rng(config.seed + 10)
    worst = 0.0
    for _ in range(int(vcfg["duality_tuples"])):
        a = NoiseCoefficient(rng.uniform(-2.0, 2.0, ws.tree.steps))
        theta = project_onto_theta(
            rng.uniform(0.0, 1.0, ws.grid.n_cells), 0.5, ws.grid
        )
        levels = [rng.standard_normal((ws.tree.level_size(k), ws.basis.count)) for k in range(ws.tree.steps + 1)]
        control = AdaptedField(ws.tree, levels)
        eta = TerminalData(ws.tree, rng.standard_normal((ws.tree.n_leaves, ws.basis.count)))
        y0 = rng.standard_normal(ws.basis.count)
        pairing, initial, terminal = duality_terms(
            y0, control, theta, a, eta, ws.tree, ws.basis, corruption=corruption
        )
        scale = abs(pairing) + abs(initial) + abs(terminal) + 1e-300
        worst = max(worst, abs(pairing + initial - terminal) / scale)
    return worst <= 1e-10, {"worst_relative_gap": worst}


def _suite_decay(ws, config):
    vcfg = config.data["verify"]
    lam_max = float(ws.basis.eigenvalues[-1])
    rng = np.random.default_rng(config.seed + 20)
    violations = 0
    for _ in range(int(vcfg["decay_samples"])):
        a = NoiseCoefficient(rng.uniform(-2.0, 2.0, ws.tree.steps))
        eta = TerminalData(
            ws.tree, rng.standard_normal((ws.tree.n_leaves, ws.basis.count))
        )
        lam = rng.uniform(0.0, lam_max)
        if obs.check_decay(eta, lam, a, ws.tree, ws.basis) < -1e-12:
            violations += 1
    return violations == 0, {"violations": violations}


def _suite_levelset(ws, config):
    vcfg = config.data["verify"]
    rng = np.random.default_rng(config.seed + 30)
    bad = 0
    for _ in range(int(vcfg["levelset_samples"])):
        alpha = rng.uniform(0.05, 0.95)
        dens = project_onto_theta(rng.uniform(0, 1, ws.grid.n_cells), alpha, ws.grid)
        _, _, ok = obs.level_set_bound(dens, alpha)
        bad += 0 if ok else 1
    return bad == 0, {"violations": bad}


def _suite_value_identity(ws, config):
    vcfg = config.data["verify"]
    rng = np.random.default_rng(config.seed + 40)
    worst = 0.0
    for _ in range(int(vcfg["value_identity_samples"])):
        alpha = rng.uniform(0.2, 0.9)
        dens = project_onto_theta(rng.uniform(0, 1, ws.grid.n_cells), alpha, ws.grid)
        y0 = rng.standard_normal(ws.basis.count)
        op = assemble_gram_operator(dens, ws.window, ws.noise, ws.tree, ws.basis)
        sol = solve_hum(y0, op, eps=0.0, tol=1e-12)
        if sol.cost_N > 0:
            worst = max(worst, abs(sol.value_V + 0.5 * sol.cost_N) / (0.5 * sol.cost_N))
    return worst <= 1e-8, {"worst_relative": worst}


def _suite_convexity(ws, config):
    vcfg = config.data["verify"]
    rng = np.random.default_rng(config.seed + 50)
    alpha = float(config.data["grid"]["alpha"])
    problem = PlacementProblem(
        ws.y0, ws.window, ws.noise, ws.tree, ws.basis, ws.grid, alpha
    )
    worst = np.inf
    for _ in range(int(vcfg["convexity_pairs"])):
        t1 = project_onto_theta(rng.uniform(0, 1, ws.grid.n_cells), alpha, ws.grid).theta
        t2 = project_onto_theta(rng.uniform(0, 1, ws.grid.n_cells), alpha, ws.grid).theta
        slack = 0.5 * problem.cost(t1) + 0.5 * problem.cost(t2) - problem.cost(0.5 * (t1 + t2))
        worst = min(worst, slack)
    return worst >= -1e-8, {"worst_midpoint_slack": worst}


def _suite_nash(ws, config):
    alpha = float(config.data["grid"]["alpha"])
    scfg = config.data["solver"]
    problem = PlacementProblem(
        ws.y0, ws.window, ws.noise, ws.tree, ws.basis, ws.grid, alpha
    )
    theta_star, nash, game = optimize_actuator(
        ws.y0, ws.window, ws.noise, ws.tree, ws.basis, ws.grid, alpha,
        method=scfg["method"], tol=float(scfg["outer_tol"]),
        max_iter=int(scfg["outer_max_iter"]), problem=problem,
    )
    n_probes = int(config.data["verify"]["nash_probes"])
    decreased, probed = mass_swap_probes(
        theta_star, nash.energy_per_cell, n_probes=n_probes, seed=config.seed + 60
    )
    rel_gap = abs(game.gap) / max(abs(game.u_plus), 1e-300)
    ok = bool(nash.ok and rel_gap <= 1e-3 and (probed == 0 or decreased >= 0.99 * probed))
    return ok, {
        "nash": nash.as_dict(),
        "game": game.as_dict(),
        "swap_decreased": decreased,
        "swap_probed": probed,
    }


def cmd_verify(config: RunConfig):
    ws = Workspace(config)
    corruption = 1.01 if config.data["debug"]["corrupt_adjoint"] else 1.0
    t0 = time.perf_counter()
    suites = {}
    suites["duality"] = _suite_duality(ws, config, corruption)
    suites["decay"] = _suite_decay(ws, config)
    suites["level_set"] = _suite_levelset(ws, config)
    suites["value_identity"] = _suite_value_identity(ws, config)
    suites["convexity"] = _suite_convexity(ws, config)
    suites["nash"] = _suite_nash(ws, config)
    passed = all(ok for ok, _ in suites.values())
    results = {name: {"pass": ok, **detail} for name, (ok, detail) in suites.items()}
    timings = {"total_s": time.perf_counter() - t0}
    report = make_report("verify", config, results, passed, timings)
    path = write_report(config.data["out"], report)
    return report, path, 0 if passed else 1


def cmd_sweep(config: RunConfig):
    ws = Workspace(config)
    fractions = config.data["sweep"]["region_fractions"]
    rows = []
    prev = np.inf
    monotone = True
    for frac in fractions:
        frac = float(frac)
        lengths = ws.domain.lengths
        box = [0.0, frac * lengths[0]] + ([0.0, lengths[1]] if ws.domain.dims == 2 else [])
        region_cfg = dict(config.data["region"], boxes=[box])
        sub = RunConfig(dict(config.data, region=region_cfg))
        region = sub.region(ws.domain)
        t0 = time.perf_counter()
        c_l2 = obs.l2_observability_constant(
            region, ws.window, ws.noise, ws.tree, ws.basis
        )
        c_l1 = obs.l1_observability_constant(
            region, ws.window, ws.noise, ws.tree, ws.basis,
            restarts=4, seed=config.seed, ascent_steps=30, samples=32,
        )
        runtime = time.perf_counter() - t0
        rows.append(
            (
                region.measure,
                ws.window.measure,
                ws.noise.tau,
                ws.tree.steps,
                ws.basis.count,
                c_l2,
                c_l1,
                runtime,
            )
        )
        monotone = monotone and c_l2 <= prev * (1.0 + 1e-9)
        prev = c_l2
    header = ["G_measure", "E_measure", "tau", "K", "J", "c_l2", "c_l1_lower", "runtime_s"]
    path = write_csv(config.data["out"], "sweep", header, rows, config.hash())
    report = make_report(
        "sweep",
        config,
        {"rows": [list(map(float, r)) for r in rows], "c_l2_monotone": monotone},
        bool(monotone),
    )
    write_report(config.data["out"], report)
    return report, path, 0 if monotone else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stochheat",
        description="Null-control solvers and verifiers for stochastic heat equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("observability", "hum", "optimize", "verify", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML run config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=("json", "csv"), default="json")
    sub.add_parser("defaults")
    args = parser.parse_args(argv)

    if args.command == "defaults":
        print(defaults_yaml(), end="")
        return 0

    try:
        if args.config:
            config = RunConfig.from_file(args.config, seed=args.seed, out=args.out)
        else:
            config = RunConfig(seed=args.seed, out=args.out)
        handler = {
            "observability": cmd_observability,
            "hum": cmd_hum,
            "optimize": cmd_optimize,
            "verify": cmd_verify,
            "sweep": cmd_sweep,
        }[args.command]
        report, path, code = handler(config)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DegenerateObservationError as exc:
        print(f"degenerate observation: {exc}", file=sys.stderr)
        return 3
    except IterationLimitError as exc:
        print(f"linear solver failure: {exc}", file=sys.stderr)
        return 4
    except OptimizerError as exc:
        print(f"optimizer failure: {exc}", file=sys.stderr)
        return 5
    except StochheatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.format == "json":
        print(json.dumps({"report": path, "pass": report["pass"]}, sort_keys=True))
    else:
        print(f"report,{path}")
        print(f"pass,{report['pass']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
