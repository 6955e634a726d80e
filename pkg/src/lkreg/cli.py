"""Command line entry point: ``lkreg run|verify|list-problems|savings``."""

import argparse
import json
import logging
import sys

from .harness import ConfigError, ExperimentSpec, loping_savings, run_experiment
from .operators import EXACT_LINEAR
from .problems import get_problem, list_problems, verify_problem
from .solvers import SolverAbort


def _cmd_run(args):
    spec = ExperimentSpec.from_file(args.config)
    summary = run_experiment(spec)
    out = spec.output_path()
    for row in summary.rows:
        print(f"{row['solver']:>12}  delta={row['delta_max']:<8.3g} seed={row['seed']:<4d} "
              f"n*={row['n_star']:<6d} {row['reason']:<16} err={row['terminal_error_to_exact']:.4e} "
              f"ratio={row['terminal_max_residual_ratio']:.3f} adjoints={row['adjoint_evals']}")
    for msg in summary.violations:
        print(f"INVARIANT VIOLATED: {msg}", file=sys.stderr)
    print(f"summary written to {out / 'summary.json'}")
    return 0 if summary.ok else 1


def _cmd_verify(args):
    problem = get_problem(args.problem)
    reports, checks = verify_problem(problem, seed=args.seed)
    print(f"{problem.name}: N={problem.N} dim={problem.dim} rho={problem.rho:.6g} "
          f"eta_cert={problem.eta_cert:.4g} kern_holds={problem.kern_holds}")
    print(f"{'block':>5} {'adjoint':>10} {'frechet':>8} {'norm':>12} {'eta':>8}")
    for r in reports:
        order = "exact" if r.frechet_order == EXACT_LINEAR else f"{r.frechet_order:.3f}"
        print(f"{r.block_index:>5} {r.adjoint_error:>10.2e} {order:>8} {r.norm_estimate:>12.10f} {r.eta_estimate:>8.4f}")
    for name, passed in checks.items():
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return 0 if all(checks.values()) else 1


def _cmd_list(args):
    for pid, desc in list_problems():
        print(f"{pid:<20} {desc}")
    return 0


def _cmd_savings(args):
    spec = ExperimentSpec.from_file(args.config)
    if spec.solver != "llk":
        spec.solver = "llk"
    report = loping_savings(spec)
    for run in report["runs"]:
        print(f"delta={run['delta_max']:<8.3g} seed={run['seed']:<4d} cycles={run['cycles']:<5d} "
              f"lLK={run['llk_adjoint_evals']:<6d} LK={run['classical_adjoint_evals']:<6d} "
              f"skipped={run['skipped']:<6d} final-cycle={run['final_cycle_llk']}")
    out = spec.output_path()
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "savings.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"report written to {out / 'savings.json'}")
    return 0 if report["ok"] else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="lkreg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("verify", help="operator regularity suite for a bundled problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)
    p = sub.add_parser("list-problems", help="list bundled problems")
    p.set_defaults(func=_cmd_list)
    p = sub.add_parser("savings", help="adjoint evaluations of lLK vs classical LK")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_savings)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverAbort as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
