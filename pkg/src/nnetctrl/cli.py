"""Command line front end: validate parameters, solve the limiting control
problems, simulate the finite systems, run the exact oracle, verify drift
conditions, and assemble the convergence experiment.

Every subcommand reads one INI config (see config.load_config) and writes CSV
files into the output directory. Exit codes: 0 success, 1 parameter or input
validation, 2 solver failure, 3 simulation failure, 4 file system.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial, reduce
from pathlib import Path

from .config import ExperimentConfig, load_config
from .ctmc_sim import estimate_costs, simulate
from .diffusion import DriftData
from .errors import (
    PreconditionViolation,
    SimulationError,
    SolverError,
    ValidationError,
)
from .hjb_solver import (
    Grid,
    extract_markov_control,
    policy_iteration,
    solve_constrained,
    solve_fairness,
)
from .lyapunov_verifier import (
    bar_beta,
    verify_diffusion_drift,
    verify_induced_drift,
    verify_sdp_drift,
)
from .mdp_oracle import (
    LookupPolicy,
    build_chain,
    default_box,
    load_policy_csv,
    policy_table,
    relative_value_iteration,
    save_policy_csv,
    stationary_average,
)
from .model import fluid_solution, instantiate, validate_limit_params
from .policies import (
    MarkovControlField,
    concatenated_schedule,
    default_ball_fraction,
    induced_schedule,
    sdp_schedule,
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed_base(args, cfg: ExperimentConfig) -> int:
    return cfg.seed_base if args.seed_base is None else args.seed_base


def _require_policy_file(cfg: ExperimentConfig) -> Path:
    if cfg.policy_file is None:
        raise PreconditionViolation(
            f"policy '{cfg.policy}' needs a policy_file entry in [experiment]"
        )
    path = Path(cfg.policy_file)
    if not path.exists():
        raise FileNotFoundError(str(path))
    return path


def _build_policy(cfg: ExperimentConfig, inst):
    """Policy selector shared by cmd_simulate and tests."""
    if cfg.policy == "sdp":
        return partial(sdp_schedule, inst=inst)
    if cfg.policy == "field":
        v = MarkovControlField.from_csv(_require_policy_file(cfg))
        return partial(induced_schedule, v=v, inst=inst)
    if cfg.policy == "concat":
        v = MarkovControlField.from_csv(_require_policy_file(cfg))
        ball = cfg.ball if cfg.ball is not None else default_ball_fraction(inst)
        return partial(concatenated_schedule, v=v, radius=ball, inst=inst)
    if cfg.policy == "lookup":
        return LookupPolicy(load_policy_csv(_require_policy_file(cfg)), inst)
    raise PreconditionViolation(
        f"unknown policy '{cfg.policy}' (expected sdp, field, concat, lookup)"
    )


def _sim_one(task):
    # module-level so ProcessPoolExecutor can pickle it
    inst, policy, horizon, burn_in, seed, cost, hist_box = task
    return simulate(
        inst, policy, T=horizon, burn_in=burn_in, seed=seed, cost=cost,
        hist_box=hist_box,
    )


def _run_replicates(inst, policy, cfg: ExperimentConfig, seed_base: int,
                    threads: int):
    tasks = [
        (inst, policy, cfg.horizon, cfg.burn_in, seed_base + i, cfg.cost,
         cfg.hist_box)
        for i in range(cfg.replicates)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_sim_one, tasks))
    return [_sim_one(t) for t in tasks]


def _solve_limit(cfg: ExperimentConfig):
    """Dispatch on the configured problem; returns a SolveReport that always
    carries value_field and policy_field."""
    grid = Grid.square(cfg.grid_r, cfg.grid_h)
    d = DriftData.from_params(cfg.params)
    if cfg.problem == "P1":
        _, _, rep = policy_iteration(grid, cfg.cost, d)
        return rep
    if cfg.problem == "P2":
        return solve_constrained(grid, cfg.cost, d)
    return solve_fairness(grid, cfg.cost, d, eps_mode=cfg.eps_mode)


def cmd_validate(args, cfg: ExperimentConfig) -> int:
    validate_limit_params(cfg.params)
    fl = fluid_solution(cfg.params)
    print("limit parameters valid")
    print(f"shared-pool allocation fractions: {fl.xi[0][1]!r}, {fl.xi[1][1]!r}")
    print(f"fluid headcounts: ({fl.xstar[0]!r}, {fl.xstar[1]!r})")
    print(f"drift constants: ({fl.ell[0]!r}, {fl.ell[1]!r})")
    for n in cfg.n_list:
        inst = instantiate(cfg.params, n)
        print(
            f"n={n}: pools={inst.pools} split=({inst.n12}, {inst.n22}) "
            f"arrivals=({inst.lam_n[0]!r}, {inst.lam_n[1]!r})"
        )
    return 0


def cmd_fluid(args, cfg: ExperimentConfig) -> int:
    validate_limit_params(cfg.params)
    fl = fluid_solution(cfg.params)
    out = _out_dir(args, cfg)
    rows = [
        ("xi11", fl.xi[0][0]), ("xi12", fl.xi[0][1]),
        ("xi21", fl.xi[1][0]), ("xi22", fl.xi[1][1]),
        ("xstar1", fl.xstar[0]), ("xstar2", fl.xstar[1]),
        ("zstar11", fl.zstar[0][0]), ("zstar12", fl.zstar[0][1]),
        ("zstar21", fl.zstar[1][0]), ("zstar22", fl.zstar[1][1]),
        ("ell1", fl.ell[0]), ("ell2", fl.ell[1]),
    ]
    _write_csv(out / "fluid.csv", ("key", "value"), rows)
    print(f"wrote {out / 'fluid.csv'}")
    return 0


def cmd_hjb(args, cfg: ExperimentConfig) -> int:
    validate_limit_params(cfg.params)
    rep = _solve_limit(cfg)
    out = _out_dir(args, cfg)
    rep.value_field.to_csv(out / "value.csv")
    extract_markov_control(rep.policy_field).to_csv(out / "policy.csv")
    rep.to_csv(out / "report.csv")
    print(f"problem {cfg.problem} ({rep.kind}): rho={rep.rho!r}")
    print(f"multipliers: {tuple(rep.lam)}")
    print(
        f"iterations={rep.iterations} residual={rep.residual:.3e} "
        f"consistency_gap={rep.consistency_gap:.3e}"
    )
    if rep.note:
        print(f"note: {rep.note}")
    print(f"wrote value.csv, policy.csv, report.csv in {out}")
    return 0


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    validate_limit_params(cfg.params)
    if not cfg.n_list:
        raise PreconditionViolation("simulate needs a nonempty n_list")
    inst = instantiate(cfg.params, cfg.n_list[0])
    policy = _build_policy(cfg, inst)
    seed_base = _seed_base(args, cfg)
    stats = _run_replicates(inst, policy, cfg, seed_base, args.threads)
    rows = []
    for i, st in enumerate(stats):
        est = estimate_costs(st, cfg.cost)
        rows.append((i, est.J, est.se["J"], est.J_o, est.se["J_o"],
                     est.J_c[0], est.se["J_c1"], est.J_c[1], est.se["J_c2"]))
    merged = reduce(lambda a, b: a.merge(b), stats)
    pooled = estimate_costs(merged, cfg.cost)
    rows.append(("pooled", pooled.J, pooled.se["J"], pooled.J_o,
                 pooled.se["J_o"], pooled.J_c[0], pooled.se["J_c1"],
                 pooled.J_c[1], pooled.se["J_c2"]))
    out = _out_dir(args, cfg)
    _write_csv(
        out / "costs.csv",
        ("replicate", "J", "se_J", "J_o", "se_Jo", "Jc1", "se_c1", "Jc2",
         "se_c2"),
        rows,
    )
    print(
        f"n={inst.n} policy={cfg.policy} replicates={cfg.replicates}: "
        f"J={pooled.J!r} (se {pooled.se['J']!r})"
    )
    print(f"wrote {out / 'costs.csv'}")
    return 0


def cmd_mdp(args, cfg: ExperimentConfig) -> int:
    validate_limit_params(cfg.params)
    n_values = cfg.oracle_n_list or cfg.n_list
    if not n_values:
        raise PreconditionViolation("mdp needs oracle_n_list or n_list")
    out = _out_dir(args, cfg)
    report_rows = []
    for n in n_values:
        inst = instantiate(cfg.params, n)
        box = default_box(inst, cfg.oracle_spread)
        chain = build_chain(inst, cfg.cost, box, ejwc=args.ejwc,
                            ball=cfg.ball if cfg.ball is not None else 0.3)
        sol = relative_value_iteration(chain)
        recomputed, _ = stationary_average(chain, sol.rows)
        save_policy_csv(out / f"oracle_policy_n{n}.csv",
                        policy_table(chain, sol.rows))
        report_rows.append((n, chain.nstates, chain.uniform_rate, sol.rho,
                            recomputed, sol.iterations, sol.span))
        print(
            f"n={n}: states={chain.nstates} rho={sol.rho!r} "
            f"recomputed={recomputed!r} iterations={sol.iterations}"
        )
    _write_csv(
        out / "oracle_report.csv",
        ("n", "nstates", "uniform_rate", "rho", "rho_recomputed",
         "iterations", "span"),
        report_rows,
    )
    print(f"wrote oracle_report.csv and per-n policy tables in {out}")
    return 0


def cmd_verify(args, cfg: ExperimentConfig) -> int:
    validate_limit_params(cfg.params)
    v = cfg.verify
    out = _out_dir(args, cfg)
    n0 = cfg.n_list[0] if cfg.n_list else 100
    rows = []
    for target in v.targets:
        if target == "chain":
            inst = instantiate(cfg.params, n0)
            rep = verify_sdp_drift(inst, v.k, v.beta_chain, v.radius)
            scope = v.radius
        elif target == "diffusion":
            beta = v.beta_diffusion
            if beta is None:
                beta = bar_beta(cfg.params, v.k)
            d = DriftData.from_params(cfg.params)
            rep = verify_diffusion_drift(v.k, beta, v.box, None, d)
            scope = v.box
        elif target == "induced":
            if v.policy_file is None or not Path(v.policy_file).exists():
                rows.append((target, v.k, v.beta_chain, v.ball, "skipped",
                             None, None, None, 0, "no policy file"))
                print(f"{target}: SKIPPED (no policy file)")
                continue
            inst = instantiate(cfg.params, n0)
            field = MarkovControlField.from_csv(v.policy_file)
            rep = verify_induced_drift(inst, field, v.k, v.beta_chain, v.ball)
            scope = v.ball
        else:
            raise PreconditionViolation(
                f"unknown verify target '{target}' "
                "(expected chain, diffusion, induced)"
            )
        rows.append((target, rep.k, rep.beta, scope, rep.passed, rep.C1,
                     rep.C2, rep.worst_margin, rep.n_points, rep.note))
        print(
            f"{target}: {'PASS' if rep.passed else 'FAIL'} "
            f"(k={rep.k:g}, beta={rep.beta:g}, worst margin "
            f"{rep.worst_margin!r} over {rep.n_points} points)"
        )
    _write_csv(
        out / "drift_reports.csv",
        ("target", "k", "beta", "box", "passed", "C1", "C2", "margin",
         "n_points", "note"),
        rows,
    )
    print(f"wrote {out / 'drift_reports.csv'}")
    return 0


def cmd_optimality(args, cfg: ExperimentConfig) -> int:
    validate_limit_params(cfg.params)
    rep = _solve_limit(cfg)
    rho_star = rep.rho
    field = extract_markov_control(rep.policy_field)
    print(f"limiting problem {cfg.problem}: rho_star={rho_star!r}")
    seed_base = _seed_base(args, cfg)
    sim_rows = {}
    for n in cfg.n_list:
        inst = instantiate(cfg.params, n)
        ball = cfg.ball if cfg.ball is not None else default_ball_fraction(inst)
        policy = partial(concatenated_schedule, v=field, radius=ball,
                         inst=inst)
        stats = _run_replicates(inst, policy, cfg, seed_base, args.threads)
        merged = reduce(lambda a, b: a.merge(b), stats)
        est = estimate_costs(merged, cfg.cost)
        sim_rows[n] = (est.J, est.se["J"])
        print(f"n={n}: J_concat={est.J!r} (se {est.se['J']!r})")
    oracle_rows = {}
    for n in cfg.oracle_n_list:
        inst = instantiate(cfg.params, n)
        box = default_box(inst, cfg.oracle_spread)
        chain = build_chain(inst, cfg.cost, box)
        sol = relative_value_iteration(chain)
        oracle_rows[n] = sol.rho
        print(f"n={n}: rho_hat={sol.rho!r} (gap {abs(sol.rho - rho_star)!r})")
    out = _out_dir(args, cfg)
    rows = []
    for n in sorted(set(sim_rows) | set(oracle_rows)):
        j, se = sim_rows.get(n, (None, None))
        rows.append((n, j, se, oracle_rows.get(n), rho_star))
    _write_csv(
        out / "convergence.csv",
        ("n", "J_concat", "se", "rho_hat", "rho_star"),
        rows,
    )
    print(f"wrote {out / 'convergence.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nnetctrl",
        description="solve, simulate, and verify the two-class two-pool "
        "scheduling model",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "validate": (cmd_validate, "check parameters and print the fluid "
                     "solution"),
        "fluid": (cmd_fluid, "write the fluid solution table"),
        "hjb": (cmd_hjb, "solve the configured limiting control problem"),
        "simulate": (cmd_simulate, "simulate replicates under the configured "
                     "policy"),
        "mdp": (cmd_mdp, "exact long-run averages by relative value "
                "iteration"),
        "verify": (cmd_verify, "check the drift inequalities"),
        "optimality": (cmd_optimality, "convergence experiment toward the "
                       "limiting optimum"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--out", default=None, help="output directory "
                       "(overrides the config)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for replicate simulation")
        p.add_argument("--seed-base", type=int, default=None, dest="seed_base",
                       help="first replicate seed (overrides the config)")
        if name == "mdp":
            p.add_argument("--ejwc", action="store_true",
                           help="restrict actions to joint work conservation "
                           "inside the enforcement ball")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ValidationError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
