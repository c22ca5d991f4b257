"""Gaussian-process feature priors.

A batch of hidden features Phi (n x p) induces a zero-mean Gaussian
process over the batch through its dot-product Gram matrix
K_ab = <phi(x_a), phi(x_b)>.  The prior log-density for student features
is -alpha times the closed-form KL divergence between the student's and
the teacher's induced Gaussians:

    KL(N(0,K1) || N(0,K2)) = 1/2 (tr(K2^{-1} K1) - n + log|K2| - log|K1|)

Feature counts may differ between the two sides; only the n x n Grams
compare.  Because a Gram of n > p features is rank deficient, both kernels
carry diagonal jitter; one automatic x10 escalation is attempted before
factorization failure becomes an error.

The gradient of the KL with respect to the student features is analytic,
c (K2^{-1} - K1^{-1}) Phi with c the width normalization, which avoids
differentiating through the Cholesky factorization.

Baselines kept for comparison: temperature-softened soft-target matching
on logits (which requires equal logit counts, the restriction the KL prior
removes) and the plain mean-squared feature distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import (
    BatchMismatch,
    DimensionMismatch,
    FactorizationFailed,
    FeatPriorError,
    NonFiniteActivation,
    NotPositiveDefinite,
)

log = logging.getLogger(__name__)

DISTANCES = ("gp_kl", "hinton", "l2")

_JITTER_ESCALATION = 10.0


@dataclass(frozen=True)
class PriorConfig:
    """Prior strength alpha, kernel jitter, width normalization, soft-target
    temperature, and which feature distance an experiment is configured
    around (the Gram-KL training procedures always use ``gp_kl``)."""

    alpha: float = 1.0
    jitter: float = 1e-4
    normalize_by_width: bool = True
    temperature: float = 4.0
    distance: str = "gp_kl"

    def __post_init__(self):
        # alpha = 0 is allowed so the joint objective can degenerate to
        # plain task training; negative strength is meaningless.
        if self.alpha < 0.0:
            raise FeatPriorError(f"alpha must be >= 0, got {self.alpha}")
        if self.jitter < 0.0:
            raise FeatPriorError(f"jitter must be >= 0, got {self.jitter}")
        if not self.temperature > 0.0:
            raise FeatPriorError(f"temperature must be > 0, got {self.temperature}")
        if self.distance not in DISTANCES:
            raise FeatPriorError(f"unknown distance {self.distance!r}")


@dataclass(frozen=True)
class KernelMatrix:
    """Jittered SPD Gram matrix with its cached Cholesky factor."""

    gram: np.ndarray
    jitter: float
    factor: linalg.CholeskyFactor

    @property
    def size(self) -> int:
        return self.factor.size


def _as_features(phi) -> np.ndarray:
    arr = np.asarray(phi, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"feature matrix must be n x p, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteActivation("feature matrix contains non-finite entries")
    return arr


def gram_kernel(phi, config: PriorConfig) -> KernelMatrix:
    """Dot-product Gram of a feature batch, jittered and factored.

    gram = Phi Phi^T / p (+ jitter I) with width normalization on, else
    Phi Phi^T (+ jitter I).  On factorization failure the jitter escalates
    once by x10 before giving up.
    """
    arr = _as_features(phi)
    base = arr @ arr.T
    if config.normalize_by_width:
        base /= arr.shape[1]
    base = 0.5 * (base + base.T)
    jitter = config.jitter
    for attempt in range(2):
        gram = base + jitter * np.eye(arr.shape[0])
        try:
            factor = linalg.cholesky(gram)
            return KernelMatrix(gram=gram, jitter=jitter, factor=factor)
        except NotPositiveDefinite:
            if attempt == 0 and jitter > 0.0:
                log.debug("factorization failed, escalating jitter %.1e -> %.1e",
                          jitter, jitter * _JITTER_ESCALATION)
                jitter *= _JITTER_ESCALATION
            else:
                break
    raise FactorizationFailed(
        f"Gram of batch {arr.shape[0]} not factorable at jitter {jitter:.1e}"
    )


def kernel_from_gram(gram, jitter: float = 0.0) -> KernelMatrix:
    """Wrap an already-formed SPD matrix (plus optional jitter) as a
    KernelMatrix; no escalation, factorization errors surface as-is."""
    arr = np.asarray(gram, dtype=np.float64)
    if jitter:
        arr = arr + jitter * np.eye(arr.shape[0])
    return KernelMatrix(gram=arr, jitter=jitter, factor=linalg.cholesky(arr))


def gp_kl(k1: KernelMatrix, k2: KernelMatrix) -> float:
    """KL divergence between the zero-mean Gaussians N(0, k1) and N(0, k2).

    The mean term of the general formula is identically zero here and is
    kept only in the test oracle.
    """
    if k1.size != k2.size:
        raise DimensionMismatch(
            f"kernel sizes differ: {k1.size} vs {k2.size}"
        )
    n = k1.size
    return 0.5 * (
        linalg.trace_solve(k2.factor, k1.gram)
        - n
        + linalg.log_det(k2.factor)
        - linalg.log_det(k1.factor)
    )


def gp_kl_grad(phi_s, k1: KernelMatrix, k2: KernelMatrix,
               config: PriorConfig) -> np.ndarray:
    """d gp_kl / d Phi_s for k1 = gram_kernel(phi_s):
    c (K2^{-1} - K1^{-1}) Phi_s with c = 1/p under width normalization."""
    arr = _as_features(phi_s)
    n, p = arr.shape
    if k1.size != n or k2.size != n:
        raise DimensionMismatch(
            f"kernels of size {k1.size}/{k2.size} do not match batch {n}"
        )
    c = 1.0 / p if config.normalize_by_width else 1.0
    return c * (linalg.solve_spd(k2.factor, arr) - linalg.solve_spd(k1.factor, arr))


def prior_log_density(phi_s, phi_t, config: PriorConfig) -> float:
    """log prior of student features given teacher features (constant
    dropped): -alpha * gp_kl of the induced Gaussians.

    Both feature matrices must come from the same batch rows in the same
    order; widths are free to differ.
    """
    s = _as_features(phi_s)
    t = _as_features(phi_t)
    if s.shape[0] != t.shape[0]:
        raise BatchMismatch(
            f"student batch {s.shape[0]} != teacher batch {t.shape[0]}"
        )
    return -config.alpha * gp_kl(gram_kernel(s, config), gram_kernel(t, config))


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def hinton_soft_target(logits_s, logits_t, temperature: float) -> float:
    """Soft-target baseline: mean cross-entropy of the student's
    temperature-softened softmax under the teacher's.

    Unlike the GP prior this needs the student to have exactly as many
    logits as the teacher.
    """
    s = np.asarray(logits_s, dtype=np.float64)
    t = np.asarray(logits_t, dtype=np.float64)
    if s.shape != t.shape:
        raise DimensionMismatch(
            f"soft targets need matching logit shapes, got {s.shape} vs {t.shape}"
        )
    if s.ndim != 2:
        raise DimensionMismatch(f"logits must be 2-d, got shape {s.shape}")
    p = _softmax(t / temperature)
    zs = s / temperature
    log_q = zs - zs.max(axis=1, keepdims=True)
    log_q = log_q - np.log(np.exp(log_q).sum(axis=1, keepdims=True))
    return float(-np.mean(np.sum(p * log_q, axis=1)))


def l2_feature_distance(phi_s, phi_t) -> float:
    """Mean squared entrywise difference between two feature matrices."""
    s = np.asarray(phi_s, dtype=np.float64)
    t = np.asarray(phi_t, dtype=np.float64)
    if s.shape != t.shape:
        raise DimensionMismatch(
            f"L2 feature distance needs matching shapes, got {s.shape} vs {t.shape}"
        )
    return float(np.mean((s - t) ** 2))
