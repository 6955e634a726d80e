"""Operator blocks, operator systems and numerical regularity checks.

Vectors are plain one-dimensional ``float64`` numpy arrays; the inner product
is the Euclidean dot product.  An :class:`OperatorBlock` bundles the forward
map of one equation together with its derivative and the adjoint of the
derivative, which is all the Kaczmarz-type solvers ever touch.
"""

from dataclasses import dataclass
import math

import numpy as np

MACHINE_FLOOR = 1e-300

#: Returned by :func:`verify_frechet` when the linearization remainder vanishes
#: to rounding at every step (linear blocks).
EXACT_LINEAR = math.inf


class OperatorCheckError(ValueError):
    """A numerical operator check could not be carried out.

    ``direction`` holds the probe that triggered the failure, if any.
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


def as_vector(x, dim=None):
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dimension {dim}, got {v.shape[0]}")
    return v


class OperatorBlock:
    """One equation ``F(x) = y`` of a system.

    Subclasses implement :meth:`apply`, :meth:`deriv_apply` and
    :meth:`deriv_adjoint_apply`.  Blocks hold no mutable state, so a single
    instance can be shared between concurrent runs.
    """

    is_linear = False

    def __init__(self, dim_x, dim_y):
        if dim_x < 1 or dim_y < 1:
            raise ValueError("block dimensions must be positive")
        self.dim_x = int(dim_x)
        self.dim_y = int(dim_y)

    def apply(self, x):
        raise NotImplementedError

    def deriv_apply(self, x, h):
        raise NotImplementedError

    def deriv_adjoint_apply(self, x, w):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)


class MatrixBlock(OperatorBlock):
    """Linear block ``x -> A x``."""

    is_linear = True

    def __init__(self, matrix):
        A = np.array(matrix, dtype=float)
        if A.ndim != 2:
            raise ValueError("matrix must be 2-D")
        super().__init__(A.shape[1], A.shape[0])
        A.setflags(write=False)
        self.matrix = A

    def apply(self, x):
        return self.matrix @ x

    def deriv_apply(self, x, h):
        return self.matrix @ h

    def deriv_adjoint_apply(self, x, w):
        return self.matrix.T @ w


class QuadraticBlock(OperatorBlock):
    """Weakly nonlinear block ``x -> A (x + alpha * x * x)`` (componentwise square)."""

    def __init__(self, matrix, alpha):
        A = np.array(matrix, dtype=float)
        super().__init__(A.shape[1], A.shape[0])
        A.setflags(write=False)
        self.matrix = A
        self.alpha = float(alpha)
        self.is_linear = self.alpha == 0.0

    def apply(self, x):
        return self.matrix @ (x + self.alpha * x * x)

    def deriv_apply(self, x, h):
        return self.matrix @ (h * (1.0 + 2.0 * self.alpha * x))

    def deriv_adjoint_apply(self, x, w):
        return (1.0 + 2.0 * self.alpha * x) * (self.matrix.T @ w)


class FunctionBlock(OperatorBlock):
    """Block assembled from three callables; handy for small hand-made operators."""

    def __init__(self, dim_x, dim_y, forward, deriv, deriv_adjoint, linear=False):
        super().__init__(dim_x, dim_y)
        self._forward = forward
        self._deriv = deriv
        self._deriv_adjoint = deriv_adjoint
        self.is_linear = bool(linear)

    def apply(self, x):
        return as_vector(self._forward(x), self.dim_y)

    def deriv_apply(self, x, h):
        return as_vector(self._deriv(x, h), self.dim_y)

    def deriv_adjoint_apply(self, x, w):
        return as_vector(self._deriv_adjoint(x, w), self.dim_x)


class StackedBlock(OperatorBlock):
    """The single-equation form ``1/sqrt(N) * (F_0, ..., F_{N-1})`` of a system."""

    def __init__(self, blocks):
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("need at least one block")
        super().__init__(blocks[0].dim_x, sum(b.dim_y for b in blocks))
        self.blocks = blocks
        self.scale = 1.0 / math.sqrt(len(blocks))
        self.is_linear = all(b.is_linear for b in blocks)
        self._splits = np.cumsum([b.dim_y for b in blocks])[:-1]

    def split(self, w):
        return np.split(w, self._splits)

    def stack(self, parts):
        return self.scale * np.concatenate(parts)

    def apply(self, x):
        return self.stack([b.apply(x) for b in self.blocks])

    def deriv_apply(self, x, h):
        return self.stack([b.deriv_apply(x, h) for b in self.blocks])

    def deriv_adjoint_apply(self, x, w):
        out = np.zeros(self.dim_x)
        for b, part in zip(self.blocks, self.split(w)):
            out += b.deriv_adjoint_apply(x, part)
        return self.scale * out


@dataclass(frozen=True)
class OperatorSystem:
    """Ordered family of blocks sharing one domain; ``N = len(blocks)``."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise ValueError("an operator system needs N >= 1 blocks")
        dims = {b.dim_x for b in blocks}
        if len(dims) != 1:
            raise ValueError(f"blocks disagree on dim_x: {sorted(dims)}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def N(self):
        return len(self.blocks)

    @property
    def dim_x(self):
        return self.blocks[0].dim_x

    @property
    def is_linear(self):
        return all(b.is_linear for b in self.blocks)

    def index(self, n):
        """Cyclic equation index ``n mod N``."""
        return n % self.N

    def __getitem__(self, i):
        return self.blocks[i]

    def __len__(self):
        return self.N

    def __iter__(self):
        return iter(self.blocks)


@dataclass(frozen=True)
class RegularityReport:
    block_index: int
    adjoint_error: float
    frechet_order: float
    norm_estimate: float
    eta_estimate: float
    ball_radius: float


def _unit(rng, dim, label):
    for _ in range(100):
        v = rng.standard_normal(dim)
        nv = np.linalg.norm(v)
        if nv > 0.0:
            return v / nv
    raise OperatorCheckError(f"could not draw a nonzero {label} direction")


def sample_ball(rng, center, radius):
    """Uniform sample from the closed Euclidean ball ``B_radius(center)``."""
    center = as_vector(center)
    direction = _unit(rng, center.shape[0], "ball")
    return center + radius * rng.random() ** (1.0 / center.shape[0]) * direction


def verify_adjoint(block, x, trials=10, seed=0):
    """Dot-product test for the derivative/adjoint pair of ``block`` at ``x``.

    Returns the largest relative mismatch
    ``|<F'(x)h, w> - <h, F'(x)* w>| / (|F'(x)h| |w| + floor)`` over ``trials``
    random unit directions ``h`` and ``w``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = as_vector(x, block.dim_x)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        h = _unit(rng, block.dim_x, "domain")
        w = _unit(rng, block.dim_y, "range")
        fh = block.deriv_apply(x, h)
        if not np.all(np.isfinite(fh)):
            raise OperatorCheckError("derivative produced non-finite values", direction=h)
        aw = block.deriv_adjoint_apply(x, w)
        if not np.all(np.isfinite(aw)):
            raise OperatorCheckError("adjoint produced non-finite values", direction=w)
        mismatch = abs(float(fh @ w) - float(h @ aw))
        worst = max(worst, mismatch / (np.linalg.norm(fh) * np.linalg.norm(w) + MACHINE_FLOOR))
    return worst


def frechet_remainders(block, x, h, steps):
    x = as_vector(x, block.dim_x)
    h = as_vector(h, block.dim_x)
    fx = block.apply(x)
    dh = block.deriv_apply(x, h)
    rems, floors = [], []
    for t in steps:
        ft = block.apply(x + t * h)
        rems.append(float(np.linalg.norm(ft - fx - t * dh)))
        scale = np.linalg.norm(ft) + np.linalg.norm(fx) + t * np.linalg.norm(dh)
        floors.append(64.0 * np.finfo(float).eps * scale)
    return np.array(rems), np.array(floors)


def verify_frechet(block, x, h, step_ladder=(1e-1, 1e-2, 1e-3, 1e-4)):
    """Fitted log-log slope of the first-order Taylor remainder.

    A correct derivative of a smooth map gives a slope near 2.  When every
    remainder sits at the rounding floor the block is treated as linear and
    :data:`EXACT_LINEAR` is returned.
    """
    steps = np.asarray(step_ladder, dtype=float)
    if steps.size < 3:
        raise ValueError("need at least 3 steps")
    if np.any(steps <= 0) or np.any(np.diff(steps) >= 0):
        raise ValueError("steps must be positive and strictly decreasing")
    rems, floors = frechet_remainders(block, x, h, steps)
    finite = np.isfinite(rems)
    if not np.any(finite):
        raise OperatorCheckError("no step of the ladder produced a finite remainder", direction=h)
    steps, rems, floors = steps[finite], rems[finite], floors[finite]
    if np.all(rems <= floors):
        return EXACT_LINEAR
    usable = rems > floors
    if usable.sum() < 2:
        raise OperatorCheckError("remainders are at rounding level for all but one step", direction=h)
    slope, _ = np.polyfit(np.log(steps[usable]), np.log(rems[usable]), 1)
    return float(slope)


def estimate_norm(block, x, iters=50, seed=0):
    """Power iteration on ``h -> F'(x)* F'(x) h``; returns ``|F'(x) v|`` for the final unit ``v``.

    The value is a lower bound for the operator norm of ``F'(x)``.
    """
    if iters < 10:
        raise ValueError("iters must be >= 10")
    x = as_vector(x, block.dim_x)
    rng = np.random.default_rng(seed)
    for _ in range(10):
        v = _unit(rng, block.dim_x, "start")
        for _ in range(iters):
            u = block.deriv_adjoint_apply(x, block.deriv_apply(x, v))
            nu = np.linalg.norm(u)
            if nu == 0.0:
                break
            v = u / nu
        else:
            return float(np.linalg.norm(block.deriv_apply(x, v)))
    # every start vector was annihilated
    return 0.0


def estimate_eta(block, center, radius, samples=200, seed=0):
    """Sampled lower estimate of the tangential cone constant on a ball.

    Takes the maximum of ``|F(x) - F(xb) - F'(x)(x - xb)| / |F(x) - F(xb)|``
    over ``samples`` pairs drawn uniformly from ``B_radius(center)``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if block.is_linear:
        return 0.0
    center = as_vector(center, block.dim_x)
    rng = np.random.default_rng(seed)
    worst = None
    for _ in range(samples):
        x = sample_ball(rng, center, radius)
        xb = sample_ball(rng, center, radius)
        fx, fxb = block.apply(x), block.apply(xb)
        den = np.linalg.norm(fx - fxb)
        if den < MACHINE_FLOOR:
            continue
        num = np.linalg.norm(fx - fxb - block.deriv_apply(x, x - xb))
        ratio = float(num / den)
        worst = ratio if worst is None else max(worst, ratio)
    if worst is None:
        raise OperatorCheckError("operator locally constant")
    return worst


def null_space(matrix, tol=1e-10):
    """Orthonormal basis of the numerical null space (relative singular value cutoff)."""
    _, s, vt = np.linalg.svd(matrix)
    cutoff = tol * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > cutoff))
    return vt[rank:].T


def derivative_matrix(block, x):
    eye = np.eye(block.dim_x)
    return np.column_stack([block.deriv_apply(x, e) for e in eye])


def kernel_inclusion(block, x_ref, points, tol=1e-10):
    """Whether ``N(F'(x_ref))`` lies inside ``N(F'(x))`` at every given point."""
    base = null_space(derivative_matrix(block, x_ref), tol)
    if base.shape[1] == 0:
        return True
    for x in points:
        J = derivative_matrix(block, x)
        scale = max(np.linalg.norm(J, 2), MACHINE_FLOOR)
        if np.linalg.norm(J @ base, 2) > tol * scale:
            return False
    return True


def regularity_report(block, index, center, radius, x_probe=None, seed=0,
                      trials=20, norm_points=5, eta_samples=200):
    """Run the adjoint, Taylor, norm and cone checks for one block."""
    rng = np.random.default_rng(seed)
    center = as_vector(center, block.dim_x)
    probe = center if x_probe is None else as_vector(x_probe, block.dim_x)
    adjoint_error = verify_adjoint(block, probe, trials=trials, seed=seed)
    h = _unit(rng, block.dim_x, "Taylor")
    order = verify_frechet(block, probe, h)
    points = [center, probe] + [sample_ball(rng, center, radius) for _ in range(norm_points)]
    norm = max(estimate_norm(block, p, iters=100, seed=seed + k) for k, p in enumerate(points))
    eta = estimate_eta(block, center, radius, samples=eta_samples, seed=seed)
    return RegularityReport(index, adjoint_error, order, norm, eta, float(radius))
