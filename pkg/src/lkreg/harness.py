"""Experiment runner: configs, trace files, summaries and the loping-savings study."""

from dataclasses import dataclass, field
import csv
from decimal import Decimal, InvalidOperation
import json
import logging
import math
import os
from pathlib import Path
import re
import time

import numpy as np

from .embedded import (
    EmbeddedConfig,
    average_components,
    identity_epsilon,
    run_elk,
    scaled_epsilon,
    terminal_quantities,
)
from .problems import add_noise, get_problem
from .solvers import (
    DEFAULT_MAX_CYCLES,
    STATIONARY,
    SolverConfig,
    check_tau,
    run_classical_lk,
    run_landweber,
    run_llk,
    terminal_residuals,
)

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "LKREG_OUTPUT_ROOT"
SOLVERS = ("llk", "classical_lk", "landweber", "elk")
TRACE_COLUMNS = ("n", "phase", "active_index", "omega", "residual_norm", "threshold",
                 "error_to_exact", "adjoint_evals_cum")


class ConfigError(ValueError):
    pass


def parse_decimal(value, name="value"):
    """Parse a decimal string (or JSON number) to the nearest float."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    try:
        return float(Decimal(str(value).strip()))
    except (InvalidOperation, ValueError):
        raise ConfigError(f"{name}: cannot parse {value!r} as a decimal") from None


def _parse_int(value, name):
    x = parse_decimal(value, name)
    if x != int(x):
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    return int(x)


def _parse_epsilon(value):
    if value in (None, "identity"):
        return "identity", 1.0
    if isinstance(value, dict) and set(value) == {"scaled"}:
        return "scaled", parse_decimal(value["scaled"], "epsilon.scaled")
    if isinstance(value, str):
        m = re.fullmatch(r"scaled\(\s*([^)]+?)\s*\)", value)
        if m:
            return "scaled", parse_decimal(m.group(1), "epsilon")
    raise ConfigError(f"epsilon must be 'identity' or 'scaled(c)', got {value!r}")


@dataclass
class ExperimentSpec:
    problem_id: str
    solver: str
    tau: float
    levels: list
    seeds: list
    lambda_mode: str = "exact"
    epsilon: tuple = ("identity", 1.0)
    max_cycles: int = DEFAULT_MAX_CYCLES
    output_dir: str = "results"
    fill: float = 0.9
    engine: str = "generic"

    @classmethod
    def from_dict(cls, cfg):
        cfg = dict(cfg)
        try:
            problem_id = str(cfg.pop("problem_id"))
            solver = str(cfg.pop("solver"))
            tau = parse_decimal(cfg.pop("tau"), "tau")
        except KeyError as exc:
            raise ConfigError(f"missing required field {exc.args[0]!r}") from None
        if solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {solver!r}")
        if "deltas" in cfg and "delta_ladder" in cfg:
            raise ConfigError("give either 'deltas' or 'delta_ladder', not both")
        if "deltas" in cfg:
            levels = [tuple(parse_decimal(v, "deltas") for v in cfg.pop("deltas"))]
        elif "delta_ladder" in cfg:
            levels = [parse_decimal(v, "delta_ladder") for v in cfg.pop("delta_ladder")]
        else:
            raise ConfigError("missing 'deltas' or 'delta_ladder'")
        seeds = [_parse_int(s, "seeds") for s in cfg.pop("seeds", [])]
        if not seeds:
            raise ConfigError("'seeds' must list at least one explicit seed")
        lambda_mode = cfg.pop("lambda_mode", "exact")
        if lambda_mode not in ("exact", "half"):
            raise ConfigError(f"lambda_mode must be 'exact' or 'half', got {lambda_mode!r}")
        spec = cls(
            problem_id=problem_id,
            solver=solver,
            tau=tau,
            levels=levels,
            seeds=seeds,
            lambda_mode=lambda_mode,
            epsilon=_parse_epsilon(cfg.pop("epsilon", "identity")),
            max_cycles=_parse_int(cfg.pop("max_cycles", DEFAULT_MAX_CYCLES), "max_cycles"),
            output_dir=str(cfg.pop("output_dir", "results")),
            fill=parse_decimal(cfg.pop("fill", "0.9"), "fill"),
            engine=str(cfg.pop("engine", "generic")),
        )
        if cfg:
            raise ConfigError(f"unknown config fields: {sorted(cfg)}")
        return spec

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def deltas_for(self, level, N):
        if isinstance(level, tuple):
            if len(level) != N:
                raise ConfigError(f"'deltas' has {len(level)} entries, problem has N={N}")
            return level
        return (level,) * N

    def output_path(self):
        root = os.environ.get(OUTPUT_ROOT_ENV)
        out = Path(self.output_dir)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


@dataclass
class Summary:
    spec: ExperimentSpec
    rows: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def to_json(self):
        return {
            "problem_id": self.spec.problem_id,
            "solver": self.spec.solver,
            "tau": self.spec.tau,
            "rows": self.rows,
            "violations": self.violations,
            "ok": self.ok,
        }


def validate(spec):
    """Resolve the problem and check tau against its certified cone constant."""
    try:
        problem = get_problem(spec.problem_id)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    bound = check_tau(problem.eta_cert)
    if not spec.tau > bound:
        raise ConfigError(f"tau={spec.tau} must exceed {bound:.6g} for {problem.name} (eta={problem.eta_cert:.4g})")
    if spec.engine not in ("generic", "kernel"):
        raise ConfigError(f"engine must be 'generic' or 'kernel', got {spec.engine!r}")
    if spec.engine == "kernel" and spec.solver not in ("llk", "classical_lk"):
        raise ConfigError("engine 'kernel' is only available for llk and classical_lk")
    return problem


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trace(path, trace):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in trace:
            w.writerow([rec.n, rec.phase, rec.active_index, rec.omega, _fmt(rec.residual_norm),
                        _fmt(rec.threshold), _fmt(rec.error_to_ref), rec.adjoint_evals_cum])


def read_trace(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _ratio(r, t):
    if t > 0:
        return r / t
    return 0.0 if r == 0 else math.inf


def solve(spec, problem, sample):
    """Run the configured solver on one noisy sample; returns (result, terminal error, residual ratio)."""
    system, noise = problem.system, sample.noise
    if spec.solver == "elk":
        lam = 0.5 if spec.lambda_mode == "half" else None
        kind, c = spec.epsilon
        eps = identity_epsilon if kind == "identity" else scaled_epsilon(c)
        cfg = EmbeddedConfig(spec.tau, lam=lam, epsilon_fn=eps, max_cycles=spec.max_cycles,
                             eta_assumed=problem.eta_cert, record_error_to=problem.x_exact, rho=problem.rho)
        result = run_elk(system, problem.x0, sample.data, noise, cfg)
        x = average_components(result.final_iterate)
        rs, g, t_res, t_bal = terminal_quantities(system, result, sample.data, noise, cfg)
        ratio = max(_ratio(rs, t_res), _ratio(g, t_bal))
    else:
        cfg = SolverConfig(spec.tau, max_cycles=spec.max_cycles, eta_assumed=problem.eta_cert,
                           record_error_to=problem.x_exact, rho=problem.rho)
        if spec.solver == "llk":
            result = run_llk(system, problem.x0, sample.data, noise, cfg, engine=spec.engine)
        elif spec.solver == "classical_lk":
            result = run_classical_lk(system, problem.x0, sample.data, noise, cfg, engine=spec.engine)
        else:
            result = run_landweber(system, problem.x0, sample.data, noise, cfg)
        x = result.final_iterate
        res = terminal_residuals(system, x, sample.data)
        ratio = max(_ratio(r, spec.tau * d) for r, d in zip(res, noise.deltas))
    error = float(np.linalg.norm(x - problem.x_exact))
    return result, error, ratio


def trace_invariants(spec, result, N, ratio):
    """Post-hoc checks computed from the trace; returns a list of messages."""
    bad = []
    trace = result.trace
    evals = 0
    for rec in trace:
        if spec.solver in ("llk", "elk") and rec.omega != (1 if rec.residual_norm > rec.threshold else 0):
            bad.append(f"step {rec.n} ({rec.phase}): omega disagrees with residual/threshold")
            break
        if rec.phase == "balance":
            cost = 0
        elif spec.solver in ("landweber", "elk"):
            cost = N
        else:
            cost = 1
        evals += rec.omega * cost
        if rec.adjoint_evals_cum != evals:
            bad.append(f"step {rec.n} ({rec.phase}): adjoint count {rec.adjoint_evals_cum} != {evals}")
            break
    if result.reason == STATIONARY:
        if ratio > 1.0:
            bad.append(f"terminal residual ratio {ratio:.6g} > 1 on stationary termination")
        if spec.solver == "llk":
            if result.termination_index % N:
                bad.append(f"n_star={result.termination_index} is not a multiple of N={N}")
            if any(rec.omega for rec in trace[-N:]):
                bad.append("last cycle of a stationary run has a nonzero weight")
    return bad


def run_experiment(spec, write=True):
    """Run every (noise level, seed) pair of ``spec``.

    Writes one CSV trace per run plus ``summary.json`` under the output
    directory and returns the :class:`Summary`.  Runs are executed in the
    order levels x seeds, so outputs are deterministic given the seeds.
    """
    problem = validate(spec)
    out = spec.output_path()
    if write:
        try:
            (out / "traces").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {out} is not writable: {exc}") from None
    summary = Summary(spec)
    for li, level in enumerate(spec.levels):
        deltas = spec.deltas_for(level, problem.N)
        for seed in spec.seeds:
            sample = add_noise(problem, deltas, fill=spec.fill, seed=seed)
            t0 = time.perf_counter()
            result, error, ratio = solve(spec, problem, sample)
            wall = time.perf_counter() - t0
            name = f"{spec.solver}_level{li}_seed{seed}.csv"
            if write:
                write_trace(out / "traces" / name, result.trace)
            row = {
                "solver": spec.solver,
                "delta_max": sample.noise.delta_max,
                "seed": seed,
                "n_star": result.termination_index,
                "reason": result.reason,
                "terminal_error_to_exact": error,
                "terminal_max_residual_ratio": ratio,
                "adjoint_evals": result.adjoint_evals,
                "wall_time": wall,
                "trace": f"traces/{name}",
            }
            summary.rows.append(row)
            for msg in trace_invariants(spec, result, problem.N, ratio):
                summary.violations.append(f"level {li} seed {seed}: {msg}")
            log.info("%s delta=%g seed=%d -> n*=%d (%s) err=%.4g", spec.solver, sample.noise.delta_max,
                     seed, result.termination_index, result.reason, error)
    if write:
        with open(out / "summary.json", "w") as fh:
            json.dump(summary.to_json(), fh, indent=2)
    return summary


def adjoint_evals_per_cycle(trace, N):
    counts = []
    for start in range(0, len(trace), N):
        counts.append(sum(rec.omega for rec in trace[start:start + N]))
    return counts


def loping_savings(llk_spec, classical_spec=None):
    """Compare adjoint evaluations of lLK against classical LK over the same cycles.

    Classical LK is run for exactly as many cycles as the lLK run took
    (stationary cycle included), with its discrepancy stop disabled.
    """
    problem = validate(llk_spec)
    classical_spec = classical_spec or llk_spec
    runs = []
    ok = True
    for level in llk_spec.levels:
        deltas = llk_spec.deltas_for(level, problem.N)
        for seed in llk_spec.seeds:
            sample = add_noise(problem, deltas, fill=llk_spec.fill, seed=seed)
            cfg = SolverConfig(llk_spec.tau, max_cycles=llk_spec.max_cycles, eta_assumed=problem.eta_cert,
                               rho=problem.rho)
            llk = run_llk(problem.system, problem.x0, sample.data, sample.noise, cfg, engine=llk_spec.engine)
            cycles = len(llk.trace) // problem.N
            ccfg = SolverConfig(classical_spec.tau, max_cycles=cycles, eta_assumed=problem.eta_cert,
                                rho=problem.rho)
            lk = run_classical_lk(problem.system, problem.x0, sample.data, sample.noise, ccfg,
                                  fixed_cycles=cycles, engine=classical_spec.engine)
            llk_cycles = adjoint_evals_per_cycle(llk.trace, problem.N)
            lk_cycles = adjoint_evals_per_cycle(lk.trace, problem.N)
            entry = {
                "delta_max": sample.noise.delta_max,
                "deltas": list(sample.noise.deltas),
                "seed": seed,
                "cycles": cycles,
                "llk_reason": llk.reason,
                "llk_adjoint_evals": llk.adjoint_evals,
                "classical_adjoint_evals": lk.adjoint_evals,
                "skipped": lk.adjoint_evals - llk.adjoint_evals,
                "llk_per_cycle": llk_cycles,
                "classical_per_cycle": lk_cycles,
                "final_cycle_llk": llk_cycles[-1] if llk_cycles else 0,
                "first_loped": first_loped_equation(llk.trace),
            }
            if llk.reason == STATIONARY and sample.noise.delta_max > 0:
                ok &= entry["final_cycle_llk"] == 0 and entry["skipped"] > 0
            runs.append(entry)
    return {"problem_id": problem.name, "tau": llk_spec.tau, "runs": runs, "ok": bool(ok)}


def first_loped_equation(trace):
    """Equation index of the first step with weight 0, or None."""
    for rec in trace:
        if rec.omega == 0:
            return rec.active_index
    return None
