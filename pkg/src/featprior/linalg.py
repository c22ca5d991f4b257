"""Dense symmetric-positive-definite primitives.

Cholesky factorization plus the log-determinant, linear-solve and
trace-of-solve routines built on it.  Everything here runs in float64:
log-determinants and traces of solves on near-singular Gram matrices lose
too much precision in float32.

Inputs asymmetric within ``SYMMETRY_RTOL`` (float accumulation noise) are
symmetrized as (A + A^T)/2 with a debug log line; larger asymmetry is an
error.  There is no pivoting and no jitter here: a failed factorization is
surfaced to the caller, which owns the jitter policy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric

log = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-10


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with A = L L^T, diag(L) > 0."""

    lower: np.ndarray
    size: int


def _as_square(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {arr.shape}")
    return arr


def cholesky(a) -> CholeskyFactor:
    """Factor a symmetric positive-definite matrix as L L^T.

    Raises NotSymmetric when the relative asymmetry exceeds SYMMETRY_RTOL
    and NotPositiveDefinite when a pivot is non-positive.
    """
    arr = _as_square(a)
    n = arr.shape[0]
    scale = float(np.max(np.abs(arr))) if n else 0.0
    asym = float(np.max(np.abs(arr - arr.T))) if n else 0.0
    if not asym <= SYMMETRY_RTOL * max(scale, 1.0):
        raise NotSymmetric(
            f"asymmetry {asym:.3e} exceeds tolerance for scale {scale:.3e}"
        )
    if asym > 0.0:
        log.debug("symmetrizing input with asymmetry %.3e", asym)
        arr = 0.5 * (arr + arr.T)

    lower = np.zeros_like(arr)
    for j in range(n):
        pivot = arr[j, j] - lower[j, :j] @ lower[j, :j]
        if not pivot > 0.0:
            raise NotPositiveDefinite(
                f"pivot {pivot:.6e} at index {j}; matrix needs jitter upstream"
            )
        ljj = math.sqrt(pivot)
        lower[j, j] = ljj
        if j + 1 < n:
            lower[j + 1 :, j] = (arr[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / ljj
    return CholeskyFactor(lower=lower, size=n)


def reconstruct(f: CholeskyFactor) -> np.ndarray:
    """L L^T, the matrix the factor represents."""
    return f.lower @ f.lower.T


def log_det(f: CholeskyFactor) -> float:
    """log |A| = 2 * sum(log diag(L))."""
    return 2.0 * float(np.sum(np.log(np.diag(f.lower))))


def solve_spd(f: CholeskyFactor, b) -> np.ndarray:
    """Solve A x = b through the factor (forward then back substitution)."""
    rhs = np.asarray(b, dtype=np.float64)
    vector = rhs.ndim == 1
    if vector:
        rhs = rhs[:, None]
    if rhs.ndim != 2 or rhs.shape[0] != f.size:
        raise DimensionMismatch(
            f"rhs shape {np.shape(b)} does not conform with factor size {f.size}"
        )
    lower = f.lower
    n = f.size
    y = rhs.copy()
    for i in range(n):
        y[i] = (y[i] - lower[i, :i] @ y[:i]) / lower[i, i]
    x = y
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lower[i + 1 :, i] @ x[i + 1 :]) / lower[i, i]
    return x[:, 0] if vector else x


def trace_solve(f: CholeskyFactor, b) -> float:
    """trace(A^{-1} B) via the solve; never forms an explicit inverse."""
    arr = _as_square(b)
    if arr.shape[0] != f.size:
        raise DimensionMismatch(
            f"matrix of size {arr.shape[0]} does not conform with factor size {f.size}"
        )
    return float(np.trace(solve_spd(f, arr)))
