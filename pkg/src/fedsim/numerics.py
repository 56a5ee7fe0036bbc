"""Spectral and integral primitives for mixing analysis.

Two operations live here:

* ``second_eigenvalue_sym`` — the second-largest eigenvalue of a symmetric
  doubly-stochastic matrix, computed by power iteration on the exactly
  deflated matrix.  Double stochasticity makes the all-ones vector an exact
  eigenvector with eigenvalue 1, so deflation is a projection rather than
  an approximation.

* ``integrate_weighted_product`` — the exact value of
  ``∫_0^1 s^w * prod_k (a_k + b_k s) ds`` via polynomial coefficient
  expansion followed by term-wise integration.  This is the workhorse
  behind the closed-form expected-square mixing matrix and the
  intermittent-averaging limit weights: for a sum S of independent
  Bernoulli(p_k) variables, E[1/(1+S)] = ∫_0^1 prod_k ((1-p_k) + p_k s) ds
  and E[1/(2+S)] picks up one extra factor of s.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import ContractViolationError, FedsimError, SolverError

SYMMETRY_TOL = 1e-12
STOCHASTIC_TOL = 1e-12
POWER_TOL = 1e-12
POWER_MAX_ITER = 100_000

# Fixed entropy for the solver's start vector: the solver is deterministic
# and independent of every simulation stream.
_START_VECTOR_ENTROPY = 0x5EC0_4D31


def _validate_sym_stochastic(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractViolationError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] < 1:
        raise ContractViolationError("matrix must be at least 1x1")
    if not np.all(np.isfinite(M)):
        raise ContractViolationError("matrix entries must be finite")
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > SYMMETRY_TOL:
        raise ContractViolationError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    row_err = np.max(np.abs(M.sum(axis=1) - 1.0))
    if row_err > STOCHASTIC_TOL:
        raise ContractViolationError(
            f"matrix rows must sum to 1 (max deviation {row_err:.3e})")
    return M


def second_eigenvalue_sym(M) -> float:
    """Largest eigenvalue of ``M - (1/m) 11^T`` for symmetric doubly-stochastic M.

    For the expected-square mixing matrices this equals the second-largest
    eigenvalue of M (the deflated matrix is positive semidefinite on the
    complement of the all-ones direction).  The iteration runs on the
    shifted operator ``M + I`` restricted to that complement, whose
    spectrum is non-negative, so the dominant eigenvalue is the second
    eigenvalue plus one regardless of sign patterns lower in the spectrum.

    Raises ``ContractViolationError`` on non-symmetric or non-stochastic
    input and ``SolverError`` (with the achieved residual) if the residual
    has not dropped below ``POWER_TOL`` after ``POWER_MAX_ITER`` steps.
    """
    M = _validate_sym_stochastic(M)
    m = M.shape[0]
    if m == 1:
        return 0.0

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(_START_VECTOR_ENTROPY)))
    v = rng.standard_normal(m)
    v -= v.mean()
    norm = np.linalg.norm(v)
    if norm == 0.0:  # pragma: no cover - fixed entropy makes this unreachable
        raise SolverError("degenerate start vector")
    v /= norm

    theta = 0.0
    residual = math.inf
    for _ in range(POWER_MAX_ITER):
        # On the complement of the all-ones direction, (M - 11^T/m + I) v
        # reduces to M v + v; re-projection kills round-off leakage.
        w = M @ v + v
        w -= w.mean()
        theta = float(v @ w)
        residual = float(np.linalg.norm(w - theta * v))
        if residual <= POWER_TOL:
            break
        wnorm = np.linalg.norm(w)
        if wnorm <= 1e-300:
            # The shifted operator annihilated the complement: eigenvalue 0,
            # i.e. the second eigenvalue of M is -1.
            return -1.0
        v = w / wnorm
    else:
        raise SolverError(
            f"power iteration did not converge after {POWER_MAX_ITER} iterations",
            residual=residual)

    lam = theta - 1.0
    if lam < -1.0 - 1e-10 or lam > 1.0 + 1e-10:
        raise SolverError(f"eigenvalue estimate {lam} outside [-1, 1]", residual=residual)
    return float(min(1.0, max(-1.0, lam)))


def integrate_weighted_product(factors: Iterable[Tuple[float, float]],
                               weight_power: int = 0) -> float:
    """Exact ``∫_0^1 s^w * prod_k (a_k + b_k s) ds``.

    The product is expanded into monomial coefficients in the s basis,
    accumulating factors smallest-degree-first, then integrated term by
    term.  Exact up to floating-point rounding; the factor coefficients
    arising from Bernoulli generating functions are non-negative, so the
    expansion involves no cancellation.
    """
    if weight_power < 0:
        raise ValueError("weight_power must be >= 0")
    coeffs = [1.0]
    for a, b in factors:
        a = float(a)
        b = float(b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError("factor coefficients must be finite")
        nxt = [0.0] * (len(coeffs) + 1)
        for j, c in enumerate(coeffs):
            nxt[j] += a * c
            nxt[j + 1] += b * c
        coeffs = nxt
    total = math.fsum(c / (j + weight_power + 1) for j, c in enumerate(coeffs))
    if not math.isfinite(total):
        raise FedsimError("integral overflowed; factor magnitudes are pathological")
    return total


def product_coefficients(factors: Sequence[Tuple[float, float]]) -> np.ndarray:
    """Monomial coefficients of ``prod_k (a_k + b_k s)`` (ascending powers)."""
    coeffs = np.zeros(len(factors) + 1)
    coeffs[0] = 1.0
    deg = 0
    for a, b in factors:
        coeffs[1:deg + 2] = a * coeffs[1:deg + 2] + b * coeffs[0:deg + 1]
        coeffs[0] = a * coeffs[0]
        deg += 1
    return coeffs
