"""Loping Landweber-Kaczmarz, classical Landweber-Kaczmarz and Landweber.

All three solvers share :class:`SolverConfig`, record one :class:`StepRecord`
per step and return a :class:`RunResult`.  Index ``n`` runs over single
equation steps; equation ``n mod N`` is active at step ``n``.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from . import _kernels
from .operators import MatrixBlock, OperatorSystem, StackedBlock, as_vector

log = logging.getLogger(__name__)

DEFAULT_MAX_CYCLES = 10_000

STATIONARY = "stationary_cycle"
DISCREPANCY = "discrepancy"
MAX_CYCLES = "max_cycles"


class SolverAbort(RuntimeError):
    """A run left the region where the convergence theory applies."""


def check_tau(eta):
    """Infimum ``2(1 + eta) / (1 - 2 eta)`` of admissible discrepancy factors."""
    eta = float(eta)
    if not 0.0 <= eta < 0.5:
        raise ValueError(f"cone condition violated: eta={eta} is outside [0, 1/2)")
    return 2.0 * (1.0 + eta) / (1.0 - 2.0 * eta)


def lop_weight(residual_norm, tau, delta_i):
    """1 if the residual exceeds ``tau * delta_i`` (strictly), else 0."""
    return 1 if residual_norm > tau * delta_i else 0


@dataclass(frozen=True)
class NoiseLevels:
    """Per-equation noise bounds ``delta^i``."""

    deltas: tuple

    def __post_init__(self):
        d = tuple(float(v) for v in np.atleast_1d(self.deltas))
        if not d:
            raise ValueError("need at least one noise level")
        if not all(math.isfinite(v) and v >= 0.0 for v in d):
            raise ValueError(f"noise levels must be finite and non-negative: {d}")
        object.__setattr__(self, "deltas", d)

    @classmethod
    def uniform(cls, delta, N):
        return cls((float(delta),) * N)

    @property
    def delta_max(self):
        return max(self.deltas)

    @property
    def delta_min(self):
        return min(self.deltas)

    @property
    def stacked(self):
        """Noise level of the single-equation form: ``|(delta^i)_i| / sqrt(N)``."""
        return math.sqrt(sum(v * v for v in self.deltas)) / math.sqrt(len(self.deltas))

    def __len__(self):
        return len(self.deltas)

    def __getitem__(self, i):
        return self.deltas[i]


@dataclass(frozen=True)
class SolverConfig:
    """Discrepancy factor, cycle guard and optional diagnostics.

    ``rho`` enables the ball check ``|x_n - x_0| <= rho``; ``record_error_to``
    only feeds the trace and never influences control flow.
    """

    tau: float
    max_cycles: int = DEFAULT_MAX_CYCLES
    eta_assumed: float = 0.0
    record_error_to: np.ndarray = None
    rho: float = None

    def __post_init__(self):
        bound = check_tau(self.eta_assumed)
        if not self.tau > bound:
            raise ValueError(f"tau={self.tau} must exceed 2(1+eta)/(1-2eta)={bound} for eta={self.eta_assumed}")
        if int(self.max_cycles) < 1:
            raise ValueError("max_cycles must be positive")
        if self.record_error_to is not None:
            object.__setattr__(self, "record_error_to", as_vector(self.record_error_to))

    def error_to_ref(self, x):
        if self.record_error_to is None:
            return None
        return float(np.linalg.norm(x - self.record_error_to))


@dataclass(frozen=True)
class StepRecord:
    n: int
    active_index: int
    omega: int
    residual_norm: float
    threshold: float
    adjoint_evals_cum: int
    error_to_ref: float = None
    phase: str = "full"


@dataclass
class RunResult:
    final_iterate: np.ndarray
    termination_index: int
    reason: str
    trace: list = field(default_factory=list)
    initial_iterate: np.ndarray = None
    method: str = ""

    @property
    def adjoint_evals(self):
        return self.trace[-1].adjoint_evals_cum if self.trace else 0

    @property
    def stationary(self):
        return self.reason == STATIONARY


def _check_inputs(system, data, noise):
    if not isinstance(system, OperatorSystem):
        system = OperatorSystem(tuple(system))
    if len(data) != system.N:
        raise ValueError(f"expected {system.N} data blocks, got {len(data)}")
    if not isinstance(noise, NoiseLevels):
        noise = NoiseLevels(noise)
    if len(noise) != system.N:
        raise ValueError(f"expected {system.N} noise levels, got {len(noise)}")
    data = [as_vector(y, b.dim_y) for y, b in zip(data, system.blocks)]
    return system, data, noise


def _residual(block, x, y, n):
    r = block.apply(x) - y
    rn = float(np.linalg.norm(r))
    if not math.isfinite(rn):
        raise SolverAbort(f"non-finite residual at step {n}")
    return r, rn


def _ball_check(x, x0, rho, n):
    if rho is None:
        return
    dist = float(np.linalg.norm(x - x0))
    if dist > rho:
        raise SolverAbort(f"iterate left the ball at step {n}: |x - x0| = {dist:.6g} > rho = {rho:.6g}")


def llk_step(system, x, n, data, noise, config, adjoint_evals=0):
    """One loping Landweber-Kaczmarz step on equation ``n mod N``.

    The adjoint is only evaluated when the loping weight is 1; a loped step
    returns the input array itself.
    """
    i = n % system.N
    block = system.blocks[i]
    r, rn = _residual(block, x, data[i], n)
    threshold = config.tau * noise[i]
    omega = lop_weight(rn, config.tau, noise[i])
    record = StepRecord(n, i, omega, rn, threshold, adjoint_evals + omega, config.error_to_ref(x))
    if omega == 0:
        return x, record
    return x - block.deriv_adjoint_apply(x, r), record


def run_llk(system, x0, data, noise, config, engine="generic", callback=None):
    """Loping Landweber-Kaczmarz iteration with the stationary-cycle stop.

    Stops at the first cycle in which every loping weight is zero; the
    termination index is the first step of that cycle and the trace includes
    the stationary cycle itself.

    Parameters
    ----------
    system : OperatorSystem
    x0 : array_like
        Start point, also the centre of the ball check.
    data : sequence of array_like
        Noisy data ``y^{delta,i}``, one vector per equation.
    noise : NoiseLevels
    config : SolverConfig
    engine : {"generic", "kernel"}
        ``"kernel"`` runs the fused sweep from :mod:`lkreg._kernels`; it
        requires all blocks to be :class:`MatrixBlock`.
    callback : callable, optional
        Called as ``callback(n, x_n, x_next, record)`` after every step of the
        generic engine.
    """
    system, data, noise = _check_inputs(system, data, noise)
    x0 = as_vector(x0, system.dim_x)
    if engine == "kernel":
        return _run_fused(system, x0, data, noise, config, _kernels.LOPING, "llk")
    if engine != "generic":
        raise ValueError(f"unknown engine {engine!r}")
    N = system.N
    x = x0.copy()
    trace = []
    evals = 0
    for cycle in range(config.max_cycles):
        active = 0
        for i in range(N):
            n = cycle * N + i
            x_next, rec = llk_step(system, x, n, data, noise, config, evals)
            trace.append(rec)
            if callback is not None:
                callback(n, x, x_next, rec)
            evals = rec.adjoint_evals_cum
            active += rec.omega
            if rec.omega:
                _ball_check(x_next, x0, config.rho, n)
            x = x_next
        if active == 0:
            log.debug("lLK stationary at cycle %d", cycle)
            return RunResult(x, cycle * N, STATIONARY, trace, x0, "llk")
    return RunResult(x, config.max_cycles * N, MAX_CYCLES, trace, x0, "llk")


def run_classical_lk(system, x0, data, noise, config, fixed_cycles=None, engine="generic", callback=None):
    """Classical Landweber-Kaczmarz (every weight 1) with the single-equation discrepancy stop.

    Stops at the first ``n`` whose active residual is at most ``tau *
    delta^[n]``; the last trace record is that check, with ``omega = 0``.
    With ``fixed_cycles`` the discrepancy test is skipped and exactly that many
    cycles are run.  ``callback`` is invoked as in :func:`run_llk`.
    """
    system, data, noise = _check_inputs(system, data, noise)
    x0 = as_vector(x0, system.dim_x)
    if engine == "kernel":
        if fixed_cycles is not None:
            config = _with_max_cycles(config, fixed_cycles)
            return _run_fused(system, x0, data, noise, config, _kernels.CLASSICAL_FIXED, "classical_lk")
        return _run_fused(system, x0, data, noise, config, _kernels.CLASSICAL_DISCREPANCY, "classical_lk")
    if engine != "generic":
        raise ValueError(f"unknown engine {engine!r}")
    N = system.N
    cycles = config.max_cycles if fixed_cycles is None else int(fixed_cycles)
    x = x0.copy()
    trace = []
    evals = 0
    for n in range(cycles * N):
        i = n % N
        block = system.blocks[i]
        r, rn = _residual(block, x, data[i], n)
        threshold = config.tau * noise[i]
        err = config.error_to_ref(x)
        if fixed_cycles is None and rn <= threshold:
            trace.append(StepRecord(n, i, 0, rn, threshold, evals, err))
            return RunResult(x, n, DISCREPANCY, trace, x0, "classical_lk")
        evals += 1
        rec = StepRecord(n, i, 1, rn, threshold, evals, err)
        trace.append(rec)
        x_next = x - block.deriv_adjoint_apply(x, r)
        if callback is not None:
            callback(n, x, x_next, rec)
        x = x_next
        _ball_check(x, x0, config.rho, n)
    return RunResult(x, cycles * N, MAX_CYCLES, trace, x0, "classical_lk")


def stacked_problem(system, data):
    """Single-equation form ``(F, y)`` with the ``1/sqrt(N)`` scaling."""
    F = StackedBlock(system.blocks)
    return F, F.stack(data)


def landweber_step(F, x, y):
    r = F.apply(x) - y
    return x - F.deriv_adjoint_apply(x, r)


def run_landweber(system, x0, data, noise, config):
    """Landweber iteration on the stacked equation with the discrepancy principle.

    One step costs N block adjoints, which is what ``adjoint_evals_cum`` counts.
    """
    system, data, noise = _check_inputs(system, data, noise)
    x0 = as_vector(x0, system.dim_x)
    F, y = stacked_problem(system, data)
    threshold = config.tau * noise.stacked
    x = x0.copy()
    trace = []
    evals = 0
    for n in range(config.max_cycles):
        r = F.apply(x) - y
        rn = float(np.linalg.norm(r))
        if not math.isfinite(rn):
            raise SolverAbort(f"non-finite residual at step {n}")
        err = config.error_to_ref(x)
        if rn <= threshold:
            trace.append(StepRecord(n, -1, 0, rn, threshold, evals, err))
            return RunResult(x, n, DISCREPANCY, trace, x0, "landweber")
        evals += system.N
        trace.append(StepRecord(n, -1, 1, rn, threshold, evals, err))
        x = x - F.deriv_adjoint_apply(x, r)
        _ball_check(x, x0, config.rho, n)
    return RunResult(x, config.max_cycles, MAX_CYCLES, trace, x0, "landweber")


def _with_max_cycles(config, cycles):
    return SolverConfig(config.tau, int(cycles), config.eta_assumed, config.record_error_to, config.rho)


def _run_fused(system, x0, data, noise, config, mode, method):
    if not all(isinstance(b, MatrixBlock) for b in system.blocks):
        raise ValueError("the kernel engine needs every block to be a MatrixBlock")
    N = system.N
    A = np.ascontiguousarray(np.vstack([b.matrix for b in system.blocks]))
    offsets = np.concatenate([[0], np.cumsum([b.dim_y for b in system.blocks])]).astype(np.int64)
    y = np.concatenate(data)
    thresholds = np.array([config.tau * d for d in noise.deltas])
    track = config.record_error_to is not None
    ref = config.record_error_to if track else np.zeros(system.dim_x)
    x, omegas, res, errs, steps, status = _kernels.kaczmarz_sweep(
        A, offsets, y, thresholds, x0.copy(), ref, track, int(config.max_cycles), mode)
    if status < 0:
        raise SolverAbort(f"non-finite residual at step {steps}")
    trace = []
    evals = 0
    for n in range(steps):
        evals += int(omegas[n])
        trace.append(StepRecord(n, n % N, int(omegas[n]), float(res[n]), float(thresholds[n % N]),
                                evals, float(errs[n]) if track else None))
    if config.rho is not None:
        # the fused sweep keeps no iterate history; only the end point is checked
        _ball_check(x, x0, config.rho, steps)
    if status == _kernels.STATIONARY:
        return RunResult(x, steps - N, STATIONARY, trace, x0, method)
    if status == _kernels.DISCREPANCY:
        return RunResult(x, steps - 1, DISCREPANCY, trace, x0, method)
    return RunResult(x, config.max_cycles * N, MAX_CYCLES, trace, x0, method)


def monotonicity_gap(x_n, x_next, x_ref, record, eta, delta_i):
    """Both sides of the one-step error estimate.

    ``lhs = |x_next - x_ref|^2 - |x_n - x_ref|^2`` and
    ``rhs = omega * r * (2 (1 + eta) delta_i - (1 - 2 eta) r)``.  On a
    conforming run ``lhs <= rhs`` up to rounding.
    """
    lhs = float(np.linalg.norm(x_next - x_ref) ** 2 - np.linalg.norm(x_n - x_ref) ** 2)
    r = record.residual_norm
    rhs = record.omega * r * (2.0 * (1.0 + eta) * delta_i - (1.0 - 2.0 * eta) * r)
    return lhs, float(rhs)


def finite_stop_bound(result, noise, x_ref, eta, tau, anchor="start"):
    """Bound on the number of steps before a stationary lLK stop.

    Returns ``(lower, total, upper)`` where ``total`` is the sum of
    ``omega_n r_n^2`` over ``n < n_*``, ``lower = n_* (tau min delta)^2 / N``
    and ``upper = tau |x_ref - x_a|^2 / ((1 - 2 eta) tau - 2 (1 + eta))``.
    ``x_a`` is the start point for ``anchor="start"`` (the bound that follows
    from summing the one-step estimate) and the terminal iterate for
    ``anchor="terminal"``.
    """
    if not isinstance(noise, NoiseLevels):
        noise = NoiseLevels(noise)
    if noise.delta_min <= 0.0:
        raise ValueError("finite-stop bound is vacuous when some delta^i is zero")
    if result.reason != STATIONARY:
        raise ValueError("finite-stop bound needs a stationary termination")
    N = len(noise)
    n_star = result.termination_index
    total = sum(rec.omega * rec.residual_norm ** 2 for rec in result.trace[:n_star])
    lower = n_star * (tau * noise.delta_min) ** 2 / N
    if anchor == "start":
        x_a = result.initial_iterate
    elif anchor == "terminal":
        x_a = result.final_iterate
    else:
        raise ValueError(f"unknown anchor {anchor!r}")
    denom = (1.0 - 2.0 * eta) * tau - 2.0 * (1.0 + eta)
    if denom <= 0:
        raise ValueError("tau too small for the given eta")
    upper = tau * float(np.linalg.norm(x_ref - x_a)) ** 2 / denom
    return float(lower), float(total), float(upper)


def terminal_residuals(system, x, data):
    return np.array([np.linalg.norm(b.apply(x) - y) for b, y in zip(system.blocks, data)])
