"""Desk-scale test problems with known solutions, and the noise injector.

The linear problem discretizes a first-kind integral equation with a Gaussian
kernel on ``[0, 1]`` (midpoint rule), splits the rows into ``N`` contiguous
blocks and rescales each block to unit spectral norm.  The weakly nonlinear
problem composes the same blocks with ``x -> x + alpha x*x``.
"""

from dataclasses import dataclass, field
import functools
import re

import numpy as np

from .operators import (
    MatrixBlock,
    OperatorSystem,
    QuadraticBlock,
    estimate_eta,
    kernel_inclusion,
    regularity_report,
    sample_ball,
    EXACT_LINEAR,
)
from .solvers import NoiseLevels

ETA_TARGET = 0.45
BALL_MARGIN = 1.05


@dataclass(frozen=True)
class TestProblem:
    __test__ = False  # not a pytest class

    name: str
    system: OperatorSystem
    x_exact: np.ndarray
    x0: np.ndarray
    rho: float
    exact_data: tuple
    eta_cert: float
    kern_holds: object  # True / False, or None when undecidable
    description: str = ""
    params: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.system.N

    @property
    def dim(self):
        return self.system.dim_x


@dataclass(frozen=True)
class NoisySample:
    data: tuple
    noise: NoiseLevels
    seed: int
    fill: float
    noise_norms: tuple


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def fredholm_matrix(dim, smoothing):
    """Midpoint-rule discretization of the Gaussian kernel of width ``smoothing`` on ``[0, 1]``."""
    t = (np.arange(dim) + 0.5) / dim
    return np.exp(-((t[:, None] - t[None, :]) ** 2) / (2.0 * smoothing ** 2)) / dim


def bump(dim):
    t = (np.arange(dim) + 0.5) / dim
    return np.exp(-(((t - 0.5) / 0.25) ** 2))


def fredholm_blocks(dim, N, smoothing):
    """Row blocks of the Gaussian integral operator, each scaled to spectral norm 1."""
    if dim % N:
        raise ValueError(f"dim={dim} is not divisible by N={N}")
    K = fredholm_matrix(dim, smoothing)
    return [B / np.linalg.norm(B, 2) for B in np.split(K, N)]


def make_linear_fredholm(dim=64, N=8, smoothing=0.05, seed=0):
    """Linear ill-posed system ``A_i x = y^i`` with a smooth bump as solution."""
    blocks = [MatrixBlock(B) for B in fredholm_blocks(dim, N, smoothing)]
    system = OperatorSystem(tuple(blocks))
    x_exact = bump(dim)
    x0 = np.zeros(dim)
    rho = 2.0 * BALL_MARGIN * float(np.linalg.norm(x_exact - x0))
    rng = np.random.default_rng(seed)
    points = [sample_ball(rng, x0, rho) for _ in range(3)]
    kern = all(kernel_inclusion(b, x_exact, points) for b in blocks)
    return TestProblem(
        name=f"fredholm-{dim}-{N}",
        system=system,
        x_exact=_frozen(x_exact),
        x0=_frozen(x0),
        rho=rho,
        exact_data=tuple(_frozen(b.apply(x_exact)) for b in blocks),
        eta_cert=0.0,
        kern_holds=kern,
        description=f"Gaussian-kernel first-kind integral equation, width {smoothing}, {N} row blocks",
        params={"dim": dim, "N": N, "smoothing": smoothing, "seed": seed},
    )


def make_weakly_nonlinear(dim=64, N=8, alpha=0.05, seed=0, smoothing=0.05, max_shrinks=12,
                          eta_samples=2000):
    """Weakly nonlinear system ``A_i (x + alpha x*x) = y^i``.

    Starts from ``x0 = 0`` and a ball of radius ``2.1 |x_exact|``; while the
    sampled cone constant on the ball is not below 0.45 the ball is halved and
    ``x0`` moved towards the solution so that it stays in ``B_{rho/2}(x0)``.
    Blocks are rescaled so that ``|F_i'(x)| <= 1`` on the whole ball.

    The sampled cone constant has a heavy upper tail, hence the large default
    ``eta_samples``.
    """
    raw = fredholm_blocks(dim, N, smoothing)
    x_exact = bump(dim)
    nx = float(np.linalg.norm(x_exact))
    shrink = 1.0
    for _ in range(max_shrinks + 1):
        x0 = (1.0 - shrink) * x_exact
        rho = 2.0 * BALL_MARGIN * shrink * nx
        # |1 + 2 alpha x_k| <= 1 + 2 |alpha| |x|_inf on the ball
        factor = 1.0 + 2.0 * abs(alpha) * (float(np.max(np.abs(x0))) + rho)
        blocks = [QuadraticBlock(B / factor, alpha) for B in raw]
        etas = [estimate_eta(b, x0, rho, samples=eta_samples, seed=seed + i) for i, b in enumerate(blocks)]
        eta = max(etas)
        if eta < ETA_TARGET:
            break
        shrink *= 0.5
    else:
        raise ValueError(f"could not certify eta < {ETA_TARGET} after {max_shrinks} shrinks")
    system = OperatorSystem(tuple(blocks))
    label = f"{alpha:g}".replace("0.", "")
    return TestProblem(
        name=f"weak-nl-{dim}-{N}-a{label}",
        system=system,
        x_exact=_frozen(x_exact),
        x0=_frozen(x0),
        rho=rho,
        exact_data=tuple(_frozen(b.apply(x_exact)) for b in blocks),
        eta_cert=float(eta),
        kern_holds=True if system.is_linear else None,
        description=f"A_i (x + {alpha:g} x*x) on Gaussian-kernel blocks, ball radius {rho:.4g}",
        params={"dim": dim, "N": N, "alpha": alpha, "seed": seed, "smoothing": smoothing},
    )


def add_noise(problem, deltas, fill=0.9, seed=0):
    """Perturb every data block by a random vector of norm ``fill * delta^i``.

    Blocks with ``delta^i = 0`` keep their exact data unchanged.
    """
    if not 0.0 < fill < 1.0:
        raise ValueError("fill must lie in (0, 1)")
    noise = NoiseLevels(deltas)
    if len(noise) != problem.N:
        raise ValueError(f"expected {problem.N} noise levels, got {len(noise)}")
    rng = np.random.default_rng(seed)
    data, norms = [], []
    for y, d in zip(problem.exact_data, noise.deltas):
        direction = rng.standard_normal(y.shape[0])
        if d == 0.0:
            data.append(np.array(y))
            norms.append(0.0)
            continue
        direction *= fill * d / np.linalg.norm(direction)
        yd = y + direction
        data.append(yd)
        norms.append(float(np.linalg.norm(yd - y)))
    return NoisySample(tuple(data), noise, int(seed), float(fill), tuple(norms))


_FREDHOLM = re.compile(r"^fredholm-(\d+)-(\d+)$")
_WEAK = re.compile(r"^weak-nl-(\d+)-(\d+)-a(\d+)$")

BUNDLED = ("fredholm-64-8", "weak-nl-64-8-a05")


@functools.lru_cache(maxsize=16)
def get_problem(problem_id):
    """Build a problem from its identifier, e.g. ``fredholm-64-8`` or ``weak-nl-64-8-a05``.

    ``a05`` reads as alpha = 0.05 (digits after the decimal point).
    """
    m = _FREDHOLM.match(problem_id)
    if m:
        return make_linear_fredholm(int(m.group(1)), int(m.group(2)))
    m = _WEAK.match(problem_id)
    if m:
        alpha = float("0." + m.group(3))
        return make_weakly_nonlinear(int(m.group(1)), int(m.group(2)), alpha)
    raise KeyError(f"unknown problem id {problem_id!r}; known: {', '.join(BUNDLED)}")


def list_problems():
    return [(pid, get_problem(pid).description) for pid in BUNDLED]


def verify_problem(problem, seed=0):
    """Regularity suite for every block of a problem.

    Returns the per-block reports and a dict of named pass/fail flags.
    """
    reports = []
    for i, block in enumerate(problem.system.blocks):
        reports.append(regularity_report(block, i, problem.x0, problem.rho, x_probe=problem.x_exact,
                                         seed=seed + i))
    exact = all(np.allclose(b.apply(problem.x_exact), y, rtol=0, atol=1e-12)
                for b, y in zip(problem.system.blocks, problem.exact_data))
    checks = {
        "adjoint<=1e-10": all(r.adjoint_error <= 1e-10 for r in reports),
        "frechet_slope": all(r.frechet_order == EXACT_LINEAR or 1.7 <= r.frechet_order <= 2.3 for r in reports),
        "norm<=1+1e-8": all(r.norm_estimate <= 1.0 + 1e-8 for r in reports),
        "eta<0.45": all(r.eta_estimate < ETA_TARGET for r in reports),
        "exact_data": exact,
        "solution_in_half_ball": float(np.linalg.norm(problem.x_exact - problem.x0)) <= problem.rho / 2,
    }
    return reports, checks
