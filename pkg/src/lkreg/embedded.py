"""Embedded Landweber-Kaczmarz on the product space ``X^N``.

A stacked vector is an ``(N, dim_x)`` array whose row ``i`` is the copy
``x^i`` that only sees equation ``i``.  Each cycle is a block step, in which
every copy takes a Landweber step on its own equation, followed by a
balancing step with the circulant operator ``G = lambda^2 D* D``, where ``D``
is the cyclic forward difference between neighbouring copies.
"""

from dataclasses import dataclass
import logging
import math
import warnings

import numpy as np

from . import _kernels
from .operators import as_vector
from .solvers import (
    DEFAULT_MAX_CYCLES,
    MAX_CYCLES,
    STATIONARY,
    NoiseLevels,
    RunResult,
    SolverAbort,
    StepRecord,
    _check_inputs,
    check_tau,
)

log = logging.getLogger(__name__)


def as_stacked(x, N=None):
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"stacked vectors are 2-D (N, dim_x); got shape {X.shape}")
    if N is not None and X.shape[0] != N:
        raise ValueError(f"expected {N} components, got {X.shape[0]}")
    return X


def constant_stacked(x, N):
    """The constant stacked vector ``(x, ..., x)``."""
    return np.tile(as_vector(x), (N, 1))


def d_apply(x):
    """Cyclic forward difference: component ``i`` is ``x^{i+1} - x^i``."""
    return _kernels.cyclic_diff(np.ascontiguousarray(as_stacked(x)))


def d_adjoint(w):
    """Adjoint of :func:`d_apply`: component ``i`` is ``w^{i-1} - w^i``."""
    return _kernels.cyclic_diff_adjoint(np.ascontiguousarray(as_stacked(w)))


def g_apply(x, lam):
    """Balancing operator ``lam^2 D* D``; component ``i`` is ``lam^2 (2 x^i - x^{i-1} - x^{i+1})``."""
    return _kernels.circulant_balance(np.ascontiguousarray(as_stacked(x)), float(lam) ** 2)


def difference_norm(N):
    """Spectral norm of ``D`` on ``X^N``: ``max_k 2 |sin(pi k / N)|``."""
    return max(2.0 * abs(math.sin(math.pi * k / N)) for k in range(N))


def choose_lambda(N):
    """Largest ``lam`` with ``|lam D| <= 1``, i.e. ``1 / |D|``.

    For ``N < 2`` the difference operator vanishes; 1 is returned with a
    warning and balancing does nothing.
    """
    if N < 2:
        warnings.warn("D = 0 for N < 2; balancing is a no-op", RuntimeWarning, stacklevel=2)
        return 1.0
    return 1.0 / difference_norm(N)


def identity_epsilon(delta):
    return delta


def scaled_epsilon(c):
    c = float(c)
    if c <= 0:
        raise ValueError("epsilon scale must be positive")

    def eps(delta):
        return c * delta

    eps.scale = c
    return eps


@dataclass(frozen=True)
class EmbeddedConfig:
    """Parameters of the embedded method.

    ``lam=None`` picks :func:`choose_lambda`.  ``balance_test`` selects the
    balancing weight: ``"literal"`` compares ``|G x|`` with ``tau eps(delta)``,
    ``"kaczmarz"`` compares the residual ``|lam D x|`` of ``lam D x = 0``.
    """

    tau: float
    lam: float = None
    epsilon_fn: object = identity_epsilon
    max_cycles: int = DEFAULT_MAX_CYCLES
    eta_assumed: float = 0.0
    balance_test: str = "literal"
    record_error_to: np.ndarray = None
    rho: float = None

    def __post_init__(self):
        bound = check_tau(self.eta_assumed)
        if not self.tau > bound:
            raise ValueError(f"tau={self.tau} must exceed {bound} for eta={self.eta_assumed}")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.balance_test not in ("literal", "kaczmarz"):
            raise ValueError(f"unknown balance_test {self.balance_test!r}")
        if int(self.max_cycles) < 1:
            raise ValueError("max_cycles must be positive")
        eps = self.epsilon_fn
        if eps(0.0) != 0.0:
            raise ValueError("epsilon(0) must be 0")
        probe = [eps(d) for d in (0.0, 1e-6, 1e-3, 1e-1, 1.0, 10.0)]
        if any(b <= a for a, b in zip(probe, probe[1:])):
            raise ValueError("epsilon must be strictly increasing")
        if self.record_error_to is not None:
            object.__setattr__(self, "record_error_to", as_vector(self.record_error_to))

    def lambda_for(self, N):
        lam = choose_lambda(N) if self.lam is None else float(self.lam)
        if N >= 2 and lam * difference_norm(N) > 1.0 + 1e-12:
            raise ValueError(f"lambda={lam} violates |lambda D| <= 1 for N={N}")
        return lam

    def stacked_error(self, X):
        if self.record_error_to is None:
            return None
        return float(np.linalg.norm(X - self.record_error_to[None, :]))


def embedding_step(system, x, data, noise, config, n=0, adjoint_evals=0):
    """Block step: every copy takes a Landweber step on its own equation.

    The weight is 1 iff the stacked residual exceeds ``tau * delta_max``.
    """
    X = as_stacked(x, system.N)
    residuals = []
    for i, block in enumerate(system.blocks):
        r = block.apply(X[i]) - data[i]
        residuals.append(r)
    rn = math.sqrt(sum(float(r @ r) for r in residuals))
    if not math.isfinite(rn):
        raise SolverAbort(f"non-finite stacked residual at cycle {n}")
    threshold = config.tau * noise.delta_max
    omega = 1 if rn > threshold else 0
    evals = adjoint_evals + omega * system.N
    record = StepRecord(n, -1, omega, rn, threshold, evals, config.stacked_error(X), "embed")
    if omega == 0:
        return X, record
    step = np.vstack([block.deriv_adjoint_apply(X[i], residuals[i])
                      for i, block in enumerate(system.blocks)])
    return X - step, record


def balancing_step(x, noise, config, n=0, adjoint_evals=0):
    """Balancing step ``x - omega G x`` with ``omega = 1`` iff the balancing test exceeds ``tau eps(delta_max)``."""
    X = as_stacked(x)
    lam = config.lambda_for(X.shape[0])
    G = g_apply(X, lam)
    if config.balance_test == "literal":
        rn = float(np.linalg.norm(G))
    else:
        rn = lam * float(np.linalg.norm(d_apply(X)))
    threshold = config.tau * config.epsilon_fn(noise.delta_max)
    omega = 1 if rn > threshold else 0
    record = StepRecord(n, -1, omega, rn, threshold, adjoint_evals, config.stacked_error(X), "balance")
    if omega == 0:
        return X, record
    return X - G, record


def component_spread(x):
    """Largest distance of a component from the component mean."""
    X = as_stacked(x)
    return float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))


def average_components(x):
    """Arithmetic mean of the components."""
    return as_stacked(x).mean(axis=0)


def run_elk(system, x0, data, noise, config, callback=None):
    """Embedded Landweber-Kaczmarz from the constant start ``(x0, ..., x0)``.

    Alternates :func:`embedding_step` and :func:`balancing_step` and stops at
    the first cycle in which both weights vanish.  ``final_iterate`` is the
    stacked ``(N, dim_x)`` array; the trace holds two records per cycle.
    ``callback(cycle, x_n, x_half, x_next)`` sees every cycle.
    """
    system, data, noise = _check_inputs(system, data, noise)
    x0 = as_vector(x0, system.dim_x)
    N = system.N
    config.lambda_for(N)
    X = constant_stacked(x0, N)
    trace = []
    evals = 0
    for cycle in range(config.max_cycles):
        X_half, rec_embed = embedding_step(system, X, data, noise, config, cycle, evals)
        X_next, rec_bal = balancing_step(X_half, noise, config, cycle, rec_embed.adjoint_evals_cum)
        trace.extend((rec_embed, rec_bal))
        if callback is not None:
            callback(cycle, X, X_half, X_next)
        evals = rec_bal.adjoint_evals_cum
        if rec_embed.omega == 0 and rec_bal.omega == 0:
            log.debug("eLK stationary at cycle %d", cycle)
            return RunResult(X, cycle, STATIONARY, trace, constant_stacked(x0, N), "elk")
        if config.rho is not None:
            dist = np.linalg.norm(X_next - x0[None, :], axis=1)
            if np.any(dist > config.rho):
                raise SolverAbort(f"component {int(np.argmax(dist))} left the ball at cycle {cycle}")
        X = X_next
    return RunResult(X, config.max_cycles, MAX_CYCLES, trace, constant_stacked(x0, N), "elk")


def landweber_via_averaging(system, x, data, noise=None):
    """One Landweber step written as the mean of the N single-equation steps."""
    x = as_vector(x, system.dim_x)
    steps = [x - block.deriv_adjoint_apply(x, block.apply(x) - y)
             for block, y in zip(system.blocks, data)]
    return np.mean(steps, axis=0)


def terminal_quantities(system, result, data, noise, config):
    """Stacked residual and balancing norm at the final stacked iterate."""
    X = result.final_iterate
    rs = math.sqrt(sum(float(np.sum((b.apply(X[i]) - data[i]) ** 2))
                       for i, b in enumerate(system.blocks)))
    lam = config.lambda_for(system.N)
    if config.balance_test == "literal":
        g = float(np.linalg.norm(g_apply(X, lam)))
    else:
        g = lam * float(np.linalg.norm(d_apply(X)))
    if not isinstance(noise, NoiseLevels):
        noise = NoiseLevels(noise)
    return rs, g, config.tau * noise.delta_max, config.tau * config.epsilon_fn(noise.delta_max)
