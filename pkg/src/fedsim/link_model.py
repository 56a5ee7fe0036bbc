"""Per-round link activation probabilities and active-set sampling.

A link process emits, for each round t, the vector of probabilities that
each client's uplink to the server is usable that round.  Three variants
are supported: a static per-client vector, a uniform scalar, and a
time-varying heavy-tailed schedule in which each round draws ``n`` ranks
from a Zipf distribution, counts how many landed on each client's rank,
normalizes the counts over the clients, and clips the result into
``[floor, 1]`` (no re-normalization afterwards, so the entries need not
sum to anything in particular).
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import zeta

from .errors import ConfigError
from .streams import SeededStream

# The Zipf inverse CDF is truncated once the remaining tail mass drops
# below this; the truncation error is far below statistical noise.
ZIPF_TAIL_MASS = 1e-12
# Cap on the materialized CDF table (float64 entries).  Exponents whose
# 1e-12-cutoff support exceeds this are rejected up front.
ZIPF_MAX_TABLE = 8_388_608


@dataclass(frozen=True)
class ActiveSet:
    """Clients whose links were up in one round; ids strictly increasing."""

    round: int
    members: Tuple[int, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.members, self.members[1:])):
            raise ValueError("active-set members must be strictly increasing")
        if self.members and self.members[0] < 0:
            raise ValueError("client ids must be non-negative")

    def mask(self, m: int) -> np.ndarray:
        out = np.zeros(m, dtype=bool)
        for i in self.members:
            if i >= m:
                raise ValueError(f"client id {i} out of range for m={m}")
            out[i] = True
        return out

    def __len__(self) -> int:
        return len(self.members)


class ZipfSampler:
    """Inverse-CDF sampler for P(Z=k) = k^-a / zeta(a), k >= 1.

    The cumulative table covers all ranks up to the point where the
    remaining mass is below ``ZIPF_TAIL_MASS``; draws landing beyond it
    (probability < 1e-12) are clamped to the last tabulated rank.
    """

    def __init__(self, a: float):
        if not (a > 1.0):
            raise ConfigError(f"zipf exponent must be > 1 (got {a}); the series diverges")
        self.a = float(a)
        z = float(zeta(self.a, 1))
        # Tail bound: sum_{k>K} k^-a <= K^(1-a) / (a-1).
        support = ((self.a - 1.0) * z * ZIPF_TAIL_MASS) ** (-1.0 / (self.a - 1.0))
        support = int(math.ceil(support))
        if support > ZIPF_MAX_TABLE:
            raise ConfigError(
                f"zipf exponent {a} needs a {support}-entry inverse-CDF table to reach "
                f"tail mass {ZIPF_TAIL_MASS}; the cap is {ZIPF_MAX_TABLE}. "
                "Use a larger exponent.")
        k = np.arange(1, support + 1, dtype=float)
        self.cdf = np.cumsum(k ** -self.a / z)
        self.support = support

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        u = gen.random(size)
        idx = np.searchsorted(self.cdf, u, side="right")
        np.minimum(idx, self.support - 1, out=idx)
        return idx + 1


_zipf_cache: dict = {}


def _zipf_sampler(a: float) -> ZipfSampler:
    key = float(a)
    if key not in _zipf_cache:
        _zipf_cache[key] = ZipfSampler(key)
    return _zipf_cache[key]


def zipf_sample(a: float, stream: SeededStream) -> int:
    """Draw one Zipf(a) rank (>= 1) from the stream's own generator."""
    sampler = _zipf_sampler(a)
    return int(sampler.sample(stream.generator(), 1)[0])


class StaticLinkProcess:
    """Fixed per-client activation probabilities."""

    def __init__(self, p: Sequence[float]):
        arr = np.asarray(p, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ConfigError("static link process needs a non-empty probability vector")
        if np.any(arr <= 0.0) or np.any(arr > 1.0):
            raise ConfigError("static activation probabilities must lie in (0, 1]")
        self.p = arr
        self.m = arr.size
        self.floor = float(arr.min())

    def probabilities_at(self, t: int, stream: SeededStream) -> np.ndarray:
        if t < 0:
            raise ConfigError("round index must be >= 0")
        return self.p.copy()


class UniformLinkProcess(StaticLinkProcess):
    """All clients share one activation probability."""

    def __init__(self, p: float, m: int):
        if m < 1:
            raise ConfigError("client count must be >= 1")
        super().__init__(np.full(m, float(p)))


class ZipfCountLinkProcess:
    """Heavy-tailed, time-varying activation probabilities.

    Each round draws ``n`` i.i.d. Zipf(a) ranks, sets the raw weight of
    client i to the number of draws equal to rank i+1, normalizes by the
    total weight over the m clients, and clips entry-wise into
    ``[floor, 1]``.  Rounds use distinct stream paths, so the vectors at
    distinct rounds are independent.
    """

    def __init__(self, a: float, n: int, floor: float, m: int):
        if m < 1:
            raise ConfigError("client count must be >= 1")
        if n < 1:
            raise ConfigError("zipf sample count must be >= 1")
        if not (0.0 < floor < 1.0):
            raise ConfigError("floor must lie in (0, 1)")
        self.sampler = ZipfSampler(a)
        self.a = float(a)
        self.n = int(n)
        self.floor = float(floor)
        self.m = int(m)

    def probabilities_at(self, t: int, stream: SeededStream) -> np.ndarray:
        if t < 0:
            raise ConfigError("round index must be >= 0")
        gen = stream.child("p", t).generator()
        ranks = self.sampler.sample(gen, self.n)
        counts = np.bincount(ranks, minlength=self.m + 1)[1:self.m + 1].astype(float)
        total = counts.sum()
        raw = counts / total if total > 0 else np.zeros(self.m)
        return np.clip(raw, self.floor, 1.0)


def probabilities_at(process, t: int, stream: SeededStream) -> np.ndarray:
    """Round-t activation probability vector of ``process``."""
    return process.probabilities_at(t, stream)


def sample_active_set(p: np.ndarray, t: int, stream: SeededStream) -> ActiveSet:
    """Independent Bernoulli(p_i) activation per client, addressed by round."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ConfigError("activation probabilities must lie in [0, 1]")
    gen = stream.child("bern", t).generator()
    draws = gen.random(p.size)
    members = tuple(int(i) for i in np.nonzero(draws < p)[0])
    return ActiveSet(round=t, members=members)


@dataclass(frozen=True)
class TraceRound:
    """One round of a recorded link trace: probabilities plus the draw."""

    round: int
    p: np.ndarray
    active: ActiveSet


def build_trace(process, T: int, stream: SeededStream) -> List[TraceRound]:
    """Sample a T-round activation trace from ``process``.

    The same trace can be replayed across algorithms so that comparisons
    see identical link failures.
    """
    if T < 1:
        raise ConfigError("trace length must be >= 1")
    rounds = []
    for t in range(T):
        p = process.probabilities_at(t, stream)
        active = sample_active_set(p, t, stream)
        rounds.append(TraceRound(round=t, p=p, active=active))
    return rounds


def write_trace_csv(path, trace: Sequence[TraceRound]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "client", "p", "active"])
        for row in trace:
            mask = row.active.mask(row.p.size)
            for i in range(row.p.size):
                writer.writerow([row.round, i, f"{row.p[i]:.17g}", int(mask[i])])


def read_trace_csv(path) -> List[TraceRound]:
    per_round: dict = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["round", "client", "p", "active"]:
            raise ConfigError(f"unexpected trace header: {header}")
        for rec in reader:
            t, i = int(rec[0]), int(rec[1])
            per_round.setdefault(t, []).append((i, float(rec[2]), int(rec[3])))
    trace = []
    for t in sorted(per_round):
        entries = sorted(per_round[t])
        p = np.array([e[1] for e in entries])
        members = tuple(i for i, _, act in entries if act)
        trace.append(TraceRound(round=t, p=p, active=ActiveSet(round=t, members=members)))
    return trace


def trace_checksum(path) -> str:
    """SHA-256 of the trace file bytes; recorded in run manifests."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
