"""Loping and embedded Landweber-Kaczmarz methods for systems of ill-posed equations."""

from .embedded import (
    EmbeddedConfig,
    average_components,
    balancing_step,
    choose_lambda,
    d_adjoint,
    d_apply,
    embedding_step,
    g_apply,
    landweber_via_averaging,
    run_elk,
)
from .operators import (
    FunctionBlock,
    MatrixBlock,
    OperatorBlock,
    OperatorSystem,
    QuadraticBlock,
    StackedBlock,
    estimate_eta,
    estimate_norm,
    verify_adjoint,
    verify_frechet,
)
from .problems import add_noise, get_problem, make_linear_fredholm, make_weakly_nonlinear
from .solvers import (
    NoiseLevels,
    RunResult,
    SolverConfig,
    StepRecord,
    check_tau,
    finite_stop_bound,
    llk_step,
    lop_weight,
    monotonicity_gap,
    run_classical_lk,
    run_landweber,
    run_llk,
)

__version__ = "0.1.0"
