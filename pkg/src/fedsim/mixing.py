"""Implicit-gossip mixing matrices and their expected-square spectra.

When the server averages the active clients' models and multicasts the
result back to exactly those clients, the stacked client models are
multiplied on the right by the doubly-stochastic matrix

    W_ij = 1/|A|  if i, j in A;   1  if i = j and i not in A;   0  otherwise,

which is the identity whenever |A| <= 1.  The speed at which this random
averaging forgets initial disagreement is governed by the second-largest
eigenvalue of M = E[W^2].  This module builds W for a realized active set,
computes M both in closed form and by Monte Carlo, evaluates the spectral
quantity rho = lambda_2(M), the activation-floor ergodicity bound, and the
geometric contraction inequality E||B(prod_r W_r - 11^T/m)||_F^2 <= rho^t ||B||_F^2.

Closed form (unconditional over all activation patterns, with W = I on the
empty set): for activation probabilities p,

    M_jj  = p_j * ∫_0^1 prod_{k != j} [(1-p_k) + p_k s] ds + (1 - p_j)
    M_jj' = p_j p_j' * ∫_0^1 s * prod_{k not in {j,j'}} [(1-p_k) + p_k s] ds

using E[1/(1+S)] = ∫_0^1 E[s^S] ds for a Bernoulli sum S.  Every entry is
bounded below by (c^2/m) * (1 - (1-c)^m) when p >= c entry-wise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractViolationError
from .link_model import ActiveSet
from .numerics import integrate_weighted_product, second_eigenvalue_sym
from .streams import SeededStream

_MC_CHUNK = 65_536


@dataclass(frozen=True)
class MixingMatrix:
    m: int
    entries: np.ndarray

    def __post_init__(self):
        e = self.entries
        if e.shape != (self.m, self.m):
            raise ContractViolationError("mixing matrix shape mismatch")
        if np.max(np.abs(e - e.T), initial=0.0) > 1e-12:
            raise ContractViolationError("mixing matrix must be symmetric")
        if np.max(np.abs(e.sum(axis=1) - 1.0)) > 1e-12:
            raise ContractViolationError("mixing matrix must be doubly stochastic")


@dataclass(frozen=True)
class ExpectedSquareMixing:
    """E[W^2] for one activation probability vector.

    ``provenance`` is "exact" or "monte_carlo"; Monte Carlo estimates carry
    their trial count and satisfy the structural invariants only up to
    sampling noise.
    """

    m: int
    entries: np.ndarray
    provenance: str
    trials: Optional[int] = None


def build_mixing(active: ActiveSet, m: int) -> MixingMatrix:
    """The gossip matrix realized by one active set (identity if |A| <= 1)."""
    members = list(active.members)
    if members and members[-1] >= m:
        raise ContractViolationError(
            f"active client {members[-1]} out of range for m={m}")
    W = np.eye(m)
    if len(members) >= 1:
        idx = np.array(members)
        W[np.ix_(idx, idx)] = 1.0 / len(members)
    return MixingMatrix(m=m, entries=W)


def _validate_probabilities(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ConfigError("need a non-empty probability vector")
    if np.any(p <= 0.0):
        raise ConfigError("activation probabilities must be strictly positive")
    if np.any(p > 1.0):
        raise ConfigError("activation probabilities must be <= 1")
    return p


def expected_square_exact(p) -> ExpectedSquareMixing:
    """Closed-form E[W^2] via exact integration of linear-factor products."""
    p = _validate_probabilities(p)
    m = p.size
    M = np.empty((m, m))
    for j in range(m):
        factors = [(1.0 - p[k], p[k]) for k in range(m) if k != j]
        M[j, j] = p[j] * integrate_weighted_product(factors, 0) + (1.0 - p[j])
    for j in range(m):
        for jp in range(j + 1, m):
            factors = [(1.0 - p[k], p[k]) for k in range(m) if k != j and k != jp]
            val = p[j] * p[jp] * integrate_weighted_product(factors, 1)
            M[j, jp] = val
            M[jp, j] = val
    return ExpectedSquareMixing(m=m, entries=M, provenance="exact")


def expected_square_mc(p, trials: int, stream: SeededStream) -> ExpectedSquareMixing:
    """Monte Carlo E[W^2] over ``trials`` sampled active sets.

    Uses the per-sample identity (W^2)_jj' = 1{j,j' in A}/|A| off the
    diagonal and (W^2)_jj = 1{j in A}/|A| + 1{j not in A}, which follows
    from W being the averaging projection on the active block.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    p = np.asarray(p, dtype=float)
    m = p.size
    gen = stream.child("mc").generator()
    acc = np.zeros((m, m))
    inactive = np.zeros(m)
    done = 0
    while done < trials:
        c = min(_MC_CHUNK, trials - done)
        a = (gen.random((c, m)) < p).astype(float)
        sizes = a.sum(axis=1)
        z = a / np.maximum(sizes, 1.0)[:, None]
        acc += a.T @ z
        inactive += c - a.sum(axis=0)
        done += c
    M = acc / trials
    M[np.diag_indices(m)] += inactive / trials
    M = 0.5 * (M + M.T)
    return ExpectedSquareMixing(m=m, entries=M, provenance="monte_carlo", trials=trials)


def rho(M) -> float:
    """Second-largest eigenvalue of an expected-square mixing matrix.

    For a time-varying probability process, evaluate per round and track
    the running maximum (``rho_running_max``); the analytic
    ``ergodicity_bound`` certifies the unbounded-horizon maximum.
    """
    entries = M.entries if isinstance(M, ExpectedSquareMixing) else np.asarray(M, float)
    return second_eigenvalue_sym(entries)


def ergodicity_bound(c: float, m: int) -> float:
    """Upper bound 1 - c^4 (1-(1-c)^m)^2 / 8 on rho for activation floor c."""
    if not (0.0 < c <= 1.0):
        raise ConfigError("activation floor must lie in (0, 1]")
    if m < 1:
        raise ConfigError("client count must be >= 1")
    reach = 1.0 - (1.0 - c) ** m
    return 1.0 - (c ** 4) * (reach ** 2) / 8.0


def entrywise_lower_bound(c: float, m: int) -> float:
    """Lower bound (c^2/m)(1-(1-c)^m) on every entry of the exact E[W^2]."""
    if not (0.0 < c <= 1.0):
        raise ConfigError("activation floor must lie in (0, 1]")
    return (c * c / m) * (1.0 - (1.0 - c) ** m)


def rho_running_max(p_rounds: Sequence[np.ndarray]) -> float:
    """Max over rounds of rho(E[W^2]) for a sequence of probability vectors."""
    best = 0.0
    for p in p_rounds:
        best = max(best, rho(expected_square_exact(p)))
    return best


def rho_product(p_rounds: Sequence[np.ndarray]) -> float:
    """Product over rounds of per-round rho values.

    Diagnostic only: the contraction guarantee uses the uniform maximum,
    and this tighter product has no guarantee attached.
    """
    out = 1.0
    for p in p_rounds:
        out *= rho(expected_square_exact(p))
    return out


@dataclass(frozen=True)
class ContractionReport:
    t: int
    lhs: float
    rhs: float
    std_error: float
    passed: bool


def contraction_profile(B, p, t_max: int, trials: int,
                        stream: SeededStream) -> List[ContractionReport]:
    """Monte Carlo check of the geometric contraction at every horizon <= t_max.

    lhs is the sample mean of ||B (prod_{r<=t} W_r - 11^T/m)||_F^2 over
    independent mixing sequences; rhs is rho^t ||B||_F^2 with rho from the
    exact expected square; a horizon passes when lhs <= rhs + 3 SE.
    """
    if t_max < 1:
        raise ConfigError("horizon must be >= 1")
    if trials < 100:
        raise ConfigError("need at least 100 trials")
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise ConfigError("B must be a d x m matrix")
    p = _validate_probabilities(p)
    d, m = B.shape
    if m != p.size:
        raise ConfigError("B column count must match the probability vector")

    rho_val = rho(expected_square_exact(p))
    fro2 = float((B * B).sum())
    BJ = B.mean(axis=1)[:, None]  # B @ (11^T/m): every column is the row mean

    gen = stream.child("w").generator()
    n = np.zeros(t_max)
    s1 = np.zeros(t_max)
    s2 = np.zeros(t_max)
    done = 0
    while done < trials:
        c = min(_MC_CHUNK, trials - done)
        Y = np.broadcast_to(B, (c, d, m)).copy()
        for r in range(t_max):
            a = (gen.random((c, m)) < p).astype(float)
            cnt = a.sum(axis=1)
            means = np.einsum("tdm,tm->td", Y, a) / np.maximum(cnt, 1.0)[:, None]
            # Columns in A move to the active mean; with |A| <= 1 this is
            # the identity, matching W's definition.
            Y = Y * (1.0 - a)[:, None, :] + means[:, :, None] * a[:, None, :]
            dev = Y - BJ[None, :, :]
            per_trial = np.einsum("tdm,tdm->t", dev, dev)
            n[r] += c
            s1[r] += per_trial.sum()
            s2[r] += (per_trial * per_trial).sum()
        done += c

    reports = []
    for r in range(t_max):
        lhs = s1[r] / n[r]
        var = max(0.0, (s2[r] - s1[r] * s1[r] / n[r]) / (n[r] - 1.0))
        se = math.sqrt(var / n[r])
        rhs = (rho_val ** (r + 1)) * fro2
        reports.append(ContractionReport(t=r + 1, lhs=float(lhs), rhs=float(rhs),
                                         std_error=float(se),
                                         passed=bool(lhs <= rhs + 3.0 * se)))
    return reports


def contraction_check(B, p, t: int, trials: int, stream: SeededStream) -> ContractionReport:
    """Contraction inequality at a single horizon t."""
    return contraction_profile(B, p, t, trials, stream)[-1]
