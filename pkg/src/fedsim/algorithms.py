"""Round engines for federated averaging under intermittent links.

Both algorithms run T rounds of: draw one fresh mini-batch per client,
take s local gradient steps at a fixed step size on that batch, report to
the server, and average the reports of the clients whose links were up.
They differ in when the server's state reaches the clients:

* ``fedavg``  — the round begins with a broadcast.  Clients with active
  links restart from the server model; the rest continue from their own.
  The new server model is the mean of the active clients' reports, and
  client columns keep their own local results.

* ``fedpbc``  — the broadcast is postponed to the end of the round.  Every
  client continues from its own model; after aggregation the new server
  model is multicast only to the clients whose links were active, whose
  columns are overwritten with it.

``local_compute`` selects whether every client computes each round
("all") or only the active ones ("active_only", inactive columns frozen).

Metrics rows record the fleet as each round's local computation sees it
(after FedAvg's broadcast), which is also the exact state FedPBC carries
between rounds: gradient norm of the mean iterate, consensus error
(1/m) sum_i ||x_i - x_bar||^2, train loss, test accuracy, and the active
count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DivergedRunError
from .link_model import ActiveSet, TraceRound, probabilities_at, sample_active_set
from .mixing import build_mixing
from .streams import SeededStream

VARIANTS = ("fedavg", "fedpbc")
LOCAL_COMPUTE_MODES = ("all", "active_only")


@dataclass(frozen=True)
class AlgorithmConfig:
    variant: str
    s: int
    eta: float
    local_compute: str = "all"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.local_compute not in LOCAL_COMPUTE_MODES:
            raise ConfigError(f"unknown local_compute mode {self.local_compute!r}")
        if self.s < 1:
            raise ConfigError("local step count s must be >= 1")
        if not (self.eta > 0):
            raise ConfigError("step size eta must be > 0")


@dataclass
class FleetState:
    """Per-client parameter columns, the server model, and the round count."""

    X: np.ndarray
    global_model: np.ndarray
    round: int

    @staticmethod
    def initial(x0: np.ndarray, m: int) -> "FleetState":
        x0 = np.asarray(x0, dtype=float)
        return FleetState(X=np.repeat(x0[:, None], m, axis=1),
                          global_model=x0.copy(), round=0)

    @property
    def num_clients(self) -> int:
        return self.X.shape[1]

    def mean_iterate(self) -> np.ndarray:
        return self.X.mean(axis=1)


@dataclass(frozen=True)
class MetricsRow:
    round: int
    grad_norm: float
    consensus_error: float
    train_loss: float
    test_accuracy: Optional[float]
    active_count: int


@dataclass(frozen=True)
class MatrixFormReport:
    passed: bool
    max_deviation: float


def local_sgd(x0: np.ndarray, i: int, s: int, eta: float, objective,
              batch=None) -> np.ndarray:
    """s gradient steps at fixed step size on the round's fixed batch."""
    if s < 1:
        raise ConfigError("s must be >= 1")
    x = np.asarray(x0, dtype=float).copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            x -= eta * objective.gradient(i, x, batch)
    if not np.all(np.isfinite(x)):
        raise DivergedRunError(f"client {i} diverged during local steps",
                               round_index=-1, client=i)
    return x


def round_starts(state: FleetState, active: ActiveSet, cfg: AlgorithmConfig) -> np.ndarray:
    """Starting points of this round's local computation.

    FedAvg resets active clients to the server model; FedPBC always starts
    from the clients' own columns.
    """
    if cfg.variant == "fedavg":
        mask = active.mask(state.num_clients)
        return np.where(mask[None, :], state.global_model[:, None], state.X)
    return state.X.copy()


def _client_steps(objective, i: int, x0: np.ndarray, batch, s: int, eta: float) -> np.ndarray:
    x = x0.copy()
    for _ in range(s):
        x -= eta * objective.gradient(i, x, batch)
    return x


def _local_pass(starts: np.ndarray, compute: np.ndarray, cfg: AlgorithmConfig,
                objective, batches, workers: int = 1) -> np.ndarray:
    if not compute.any():
        return starts.copy()
    if objective.fleet_vectorized:
        X = starts.copy()
        buf = np.empty_like(X)
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(cfg.s):
                objective.gradient_fleet(X, batches, out=buf)
                buf *= cfg.eta
                X -= buf
        if not compute.all():
            X[:, ~compute] = starts[:, ~compute]
        return X
    X = starts.copy()
    clients = [int(i) for i in np.nonzero(compute)[0]]
    if workers > 1:
        # Per-client updates are pure; results are written back in client
        # order, so the outcome is identical to the sequential path.
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_client_steps, objective, i, starts[:, i],
                                   batches[i] if batches is not None else None,
                                   cfg.s, cfg.eta)
                       for i in clients]
            for i, fut in zip(clients, futures):
                X[:, i] = fut.result()
        return X
    for i in clients:
        batch = batches[i] if batches is not None else None
        X[:, i] = _client_steps(objective, i, starts[:, i], batch, cfg.s, cfg.eta)
    return X


def _aggregate(results: np.ndarray, active: ActiveSet,
               old_global: np.ndarray) -> np.ndarray:
    if len(active) == 0:
        return old_global.copy()
    return results[:, list(active.members)].mean(axis=1)


def _check_finite(X: np.ndarray, t: int, rows=None) -> None:
    if np.all(np.isfinite(X)):
        return
    bad = int(np.nonzero(~np.isfinite(X).all(axis=0))[0][0])
    raise DivergedRunError(f"non-finite iterate at round {t}, client {bad}",
                           round_index=t, client=bad, rows=rows)


def fedavg_round(state: FleetState, active: ActiveSet, cfg: AlgorithmConfig,
                 objective, batches=None, workers: int = 1) -> FleetState:
    if cfg.variant != "fedavg":
        raise ConfigError("config variant must be 'fedavg'")
    starts = round_starts(state, active, cfg)
    mask = active.mask(state.num_clients)
    compute = np.ones(state.num_clients, bool) if cfg.local_compute == "all" else mask
    results = _local_pass(starts, compute, cfg, objective, batches, workers)
    _check_finite(results, state.round)
    new_global = _aggregate(results, active, state.global_model)
    return FleetState(X=results, global_model=new_global, round=state.round + 1)


def fedpbc_round(state: FleetState, active: ActiveSet, cfg: AlgorithmConfig,
                 objective, batches=None, workers: int = 1) -> FleetState:
    if cfg.variant != "fedpbc":
        raise ConfigError("config variant must be 'fedpbc'")
    starts = round_starts(state, active, cfg)
    mask = active.mask(state.num_clients)
    compute = np.ones(state.num_clients, bool) if cfg.local_compute == "all" else mask
    results = _local_pass(starts, compute, cfg, objective, batches, workers)
    _check_finite(results, state.round)
    new_global = _aggregate(results, active, state.global_model)
    X = results
    X[:, mask] = new_global[:, None]  # the postponed multicast
    return FleetState(X=X, global_model=new_global, round=state.round + 1)


def run_round(state: FleetState, active: ActiveSet, cfg: AlgorithmConfig,
              objective, batches=None, workers: int = 1) -> FleetState:
    fn = fedavg_round if cfg.variant == "fedavg" else fedpbc_round
    return fn(state, active, cfg, objective, batches, workers)


def matrix_form_check(state_before: FleetState, active: ActiveSet,
                      cfg: AlgorithmConfig, objective,
                      state_after: FleetState, batches=None,
                      tol: float = 1e-10) -> MatrixFormReport:
    """Verify one FedPBC round equals X' = (X - eta G) W.

    G's columns are the per-client sums of the s per-step gradients and W
    is the gossip matrix of the realized active set.  Requires
    local_compute="all" (otherwise the identity does not describe the
    frozen columns).
    """
    if cfg.variant != "fedpbc" or cfg.local_compute != "all":
        raise ConfigError("matrix-form identity applies to fedpbc with local_compute='all'")
    X = state_before.X.copy()
    G = np.zeros_like(X)
    for _ in range(cfg.s):
        if objective.fleet_vectorized:
            g = objective.gradient_fleet(X, batches)
        else:
            g = np.stack([objective.gradient(i, X[:, i],
                                             batches[i] if batches is not None else None)
                          for i in range(X.shape[1])], axis=1)
        G += g
        X = X - cfg.eta * g
    W = build_mixing(active, state_before.num_clients).entries
    predicted = (state_before.X - cfg.eta * G) @ W
    dev = float(np.max(np.abs(predicted - state_after.X)))
    return MatrixFormReport(passed=dev <= tol, max_deviation=dev)


@dataclass
class ExperimentResult:
    final_state: FleetState
    rows: List[MetricsRow]


def _measure(t: int, starts: np.ndarray, objective, active_count: int) -> MetricsRow:
    with np.errstate(over="ignore", invalid="ignore"):
        x_bar = starts.mean(axis=1)
        grad_norm = float(np.linalg.norm(objective.global_gradient(x_bar)))
        dev = starts - x_bar[:, None]
        consensus = float((dev * dev).sum() / starts.shape[1])
        return MetricsRow(round=t, grad_norm=grad_norm, consensus_error=consensus,
                          train_loss=objective.train_loss(x_bar),
                          test_accuracy=objective.test_accuracy(x_bar),
                          active_count=active_count)


def run_experiment(cfg: AlgorithmConfig, objective, link_process, T: int,
                   stream: SeededStream, *, trace: Optional[Sequence[TraceRound]] = None,
                   batch_size: int = 32, x0: Optional[np.ndarray] = None,
                   workers: int = 1) -> ExperimentResult:
    """Execute T rounds and record one metrics row per round.

    Randomness is addressed by purpose: link draws under ``links`` and
    mini-batches under ``batches``/client id, so the two algorithm
    variants driven by the same stream consume identical link traces and
    identical batches.  Passing ``trace`` replays a pre-sampled trace
    instead of drawing links.
    """
    if T < 1:
        raise ConfigError("round count T must be >= 1")
    if trace is not None and len(trace) < T:
        raise ConfigError(f"trace has {len(trace)} rounds, need {T}")
    m = objective.num_clients
    if x0 is None:
        x0 = np.zeros(objective.dim)
    state = FleetState.initial(x0, m)

    link_stream = stream.child("links") if trace is None else None
    batchers = None
    if objective.needs_batches:
        batchers = objective.make_batchers(batch_size, stream.child("batches"))

    rows: List[MetricsRow] = []
    for t in range(T):
        if trace is not None:
            p, active = trace[t].p, trace[t].active
        else:
            p = probabilities_at(link_process, t, link_stream)
            active = sample_active_set(p, t, link_stream)

        starts = round_starts(state, active, cfg)
        rows.append(_measure(t, starts, objective, len(active)))

        batches = None
        if batchers is not None:
            mask = active.mask(m)
            compute = np.ones(m, bool) if cfg.local_compute == "all" else mask
            batches = [objective.batch_for(i, batchers[i]) if compute[i] else None
                       for i in range(m)]
        try:
            state = run_round(state, active, cfg, objective, batches, workers)
        except DivergedRunError as err:
            raise DivergedRunError(str(err), round_index=t, client=err.client,
                                   rows=rows) from None
    return ExperimentResult(final_state=state, rows=rows)
