"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a loop version jitted with ``numba.njit`` and a
vectorized numpy version.  The module-level names are bound to the numba
variants unless ``LKREG_DISABLE_NUMBA`` is set to a truthy value or numba
cannot be imported.  Both tables are exported so the benchmark and the tests
can exercise the two paths side by side.
"""

import os

import numpy as np

_DISABLED = os.environ.get("LKREG_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED

# sweep modes
LOPING = 0
CLASSICAL_DISCREPANCY = 1
CLASSICAL_FIXED = 2

# sweep status codes
STATIONARY = 0
DISCREPANCY = 1
MAX_CYCLES = 2


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _cyclic_diff_np(X):
    return np.roll(X, -1, axis=0) - X


def _cyclic_diff_adjoint_np(W):
    return np.roll(W, 1, axis=0) - W


def _circulant_balance_np(X, lam2):
    return lam2 * (2.0 * X - np.roll(X, 1, axis=0) - np.roll(X, -1, axis=0))


def _kaczmarz_sweep_np(A, offsets, y, thresholds, x0, ref, track_error, max_cycles, mode):
    nblocks = offsets.shape[0] - 1
    cap = max_cycles * nblocks + 1
    omegas = np.zeros(cap, dtype=np.int8)
    residuals = np.zeros(cap)
    errors = np.zeros(cap)
    x = x0.copy()
    blocks = [A[offsets[i]:offsets[i + 1]] for i in range(nblocks)]
    data = [y[offsets[i]:offsets[i + 1]] for i in range(nblocks)]
    n = 0
    for _ in range(max_cycles):
        active = 0
        for i in range(nblocks):
            r = blocks[i] @ x - data[i]
            rn = np.sqrt(r @ r)
            if not np.isfinite(rn):
                return x, omegas, residuals, errors, n, -1
            residuals[n] = rn
            if track_error:
                d = x - ref
                errors[n] = np.sqrt(d @ d)
            if mode == CLASSICAL_DISCREPANCY and rn <= thresholds[i]:
                return x, omegas, residuals, errors, n + 1, DISCREPANCY
            if mode == LOPING and not rn > thresholds[i]:
                n += 1
                continue
            omegas[n] = 1
            active += 1
            x = x - blocks[i].T @ r
            n += 1
        if mode == LOPING and active == 0:
            return x, omegas, residuals, errors, n, STATIONARY
    return x, omegas, residuals, errors, n, MAX_CYCLES


NUMPY_KERNELS = {
    "cyclic_diff": _cyclic_diff_np,
    "cyclic_diff_adjoint": _cyclic_diff_adjoint_np,
    "circulant_balance": _circulant_balance_np,
    "kaczmarz_sweep": _kaczmarz_sweep_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _cyclic_diff_loop(X):
    n, d = X.shape
    out = np.empty_like(X)
    for i in range(n):
        nxt = (i + 1) % n
        for k in range(d):
            out[i, k] = X[nxt, k] - X[i, k]
    return out


def _cyclic_diff_adjoint_loop(W):
    n, d = W.shape
    out = np.empty_like(W)
    for i in range(n):
        prv = (i - 1) % n
        for k in range(d):
            out[i, k] = W[prv, k] - W[i, k]
    return out


def _circulant_balance_loop(X, lam2):
    n, d = X.shape
    out = np.empty_like(X)
    for i in range(n):
        prv = (i - 1) % n
        nxt = (i + 1) % n
        for k in range(d):
            out[i, k] = lam2 * (2.0 * X[i, k] - X[prv, k] - X[nxt, k])
    return out


def _kaczmarz_sweep_loop(A, offsets, y, thresholds, x0, ref, track_error, max_cycles, mode):
    nblocks = offsets.shape[0] - 1
    dim = x0.shape[0]
    cap = max_cycles * nblocks + 1
    omegas = np.zeros(cap, dtype=np.int8)
    residuals = np.zeros(cap)
    errors = np.zeros(cap)
    x = x0.copy()
    r = np.empty(A.shape[0])
    n = 0
    for _ in range(max_cycles):
        active = 0
        for i in range(nblocks):
            lo = offsets[i]
            hi = offsets[i + 1]
            rn2 = 0.0
            for row in range(lo, hi):
                s = 0.0
                for k in range(dim):
                    s += A[row, k] * x[k]
                r[row] = s - y[row]
                rn2 += r[row] * r[row]
            rn = np.sqrt(rn2)
            if not np.isfinite(rn):
                return x, omegas, residuals, errors, n, -1
            residuals[n] = rn
            if track_error:
                e2 = 0.0
                for k in range(dim):
                    e2 += (x[k] - ref[k]) ** 2
                errors[n] = np.sqrt(e2)
            if mode == CLASSICAL_DISCREPANCY and rn <= thresholds[i]:
                return x, omegas, residuals, errors, n + 1, DISCREPANCY
            if mode == LOPING and not rn > thresholds[i]:
                n += 1
                continue
            omegas[n] = 1
            active += 1
            for row in range(lo, hi):
                ri = r[row]
                for k in range(dim):
                    x[k] -= A[row, k] * ri
            n += 1
        if mode == LOPING and active == 0:
            return x, omegas, residuals, errors, n, STATIONARY
    return x, omegas, residuals, errors, n, MAX_CYCLES


if HAVE_NUMBA:
    NUMBA_KERNELS = {
        "cyclic_diff": njit(cache=False)(_cyclic_diff_loop),
        "cyclic_diff_adjoint": njit(cache=False)(_cyclic_diff_adjoint_loop),
        "circulant_balance": njit(cache=False)(_circulant_balance_loop),
        "kaczmarz_sweep": njit(cache=False)(_kaczmarz_sweep_loop),
    }
else:  # pragma: no cover
    NUMBA_KERNELS = dict(NUMPY_KERNELS)

KERNELS = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

cyclic_diff = KERNELS["cyclic_diff"]
cyclic_diff_adjoint = KERNELS["cyclic_diff_adjoint"]
circulant_balance = KERNELS["circulant_balance"]
kaczmarz_sweep = KERNELS["kaczmarz_sweep"]
