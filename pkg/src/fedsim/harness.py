"""Run orchestration: objectives from configs, metric persistence, manifests,
and the figure-reproduction grids.

Stream layout for a run with root seed K (paths never mention the
algorithm, so variants compared under one seed consume identical
randomness):

    SeededStream(K).child("targets")      quadratic target matrix
    SeededStream(K).child("data")         synthetic dataset generation
    SeededStream(K).child("sim", "links") per-round link draws
    SeededStream(K).child("sim", "batches", <client>)  mini-batch order
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .algorithms import (AlgorithmConfig, ExperimentResult, MetricsRow,
                         run_experiment)
from .config import ExperimentConfig, make_link_process, serialize_config
from .errors import ConfigError, DivergedRunError
from .link_model import TraceRound, build_trace, trace_checksum, write_trace_csv
from .mixing import (entrywise_lower_bound, ergodicity_bound,
                     expected_square_exact, rho)
from .objectives import (QuadraticObjective, SoftmaxObjective, generate_synthetic,
                         global_gradient_norm)
from .oracles import fedavg_limit_integral
from .streams import GENERATOR_ID, SeededStream

ARTIFACT_VERSION = f"fedsim {__version__}"
METRICS_HEADER = "round,grad_norm,consensus_error,train_loss,test_accuracy,active_count"

SEED_ENV_VAR = "FEDSIM_SEED"

# Reference full-scale setups for the reproduction grids.
FIG2_GRID = ((0.9, 0.9), (0.9, 0.5), (0.9, 0.1), (0.5, 0.1))
FIG2_BASE = dict(m=100, d=100, s=30, eta=0.0003, T=2000)
FIG3_BASE = dict(m=150, s=10, eta=0.005, T=3000, batch_size=32,
                 zipf_a=3.0, zipf_n=20000, zipf_floor=0.1)


def format_real(x: float) -> str:
    return f"{x:.17g}"


def write_metrics_csv(path, rows: Sequence[MetricsRow]) -> None:
    """Stable schema: the column set never varies; unused fields stay empty."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(METRICS_HEADER + "\n")
        for r in rows:
            acc = "" if r.test_accuracy is None else format_real(r.test_accuracy)
            fh.write(",".join([str(r.round), format_real(r.grad_norm),
                               format_real(r.consensus_error), format_real(r.train_loss),
                               acc, str(r.active_count)]) + "\n")


def read_metrics_csv(path) -> List[MetricsRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\n")
        if header != METRICS_HEADER:
            raise ConfigError(f"unexpected metrics header {header!r}")
        for line in fh:
            f = line.rstrip("\n").split(",")
            rows.append(MetricsRow(
                round=int(f[0]), grad_norm=float(f[1]), consensus_error=float(f[2]),
                train_loss=float(f[3]), test_accuracy=None if f[4] == "" else float(f[4]),
                active_count=int(f[5])))
    return rows


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


def build_quadratic_targets(m: int, d: int, stream: SeededStream) -> np.ndarray:
    """Counterexample targets: client i's target is N((i+1) * ones, 0.01 I)."""
    gen = stream.generator()
    U = np.empty((d, m))
    for i in range(m):
        U[:, i] = gen.normal(i + 1.0, 0.1, size=d)
    return U


def build_objective(cfg: ExperimentConfig, root: SeededStream):
    cfg = cfg.scaled()
    if cfg.experiment == "counterexample":
        targets = build_quadratic_targets(cfg.m, cfg.d, root.child("targets"))
        return QuadraticObjective(targets)
    dataset = generate_synthetic(cfg.alpha, cfg.beta, cfg.m, cfg.samples_per_client,
                                 root.child("data"))
    return SoftmaxObjective(dataset)


@dataclass
class RunOutput:
    result: Optional[ExperimentResult]
    rows: List[MetricsRow]
    manifest: dict
    exit_code: int


def _manifest(cfg: ExperimentConfig, seed_source: str, rows: int, completed: bool,
              failure_round: Optional[int], wall: float,
              trace_sha: Optional[str]) -> dict:
    return {
        "artifact": ARTIFACT_VERSION,
        "config_hash": config_hash(cfg),
        "config_text": serialize_config(cfg),
        "root_seed": cfg.seed,
        "seed_source": seed_source,
        "prng": f"{GENERATOR_ID}; numpy {np.__version__}",
        "start_round": 0,
        "end_round": rows,
        "completed": completed,
        "failure_round": failure_round,
        "trace_sha256": trace_sha,
        "wall_time_sec": wall,
    }


def run_simulation(cfg: ExperimentConfig, *, seed_source: str = "config",
                   trace: Optional[Sequence[TraceRound]] = None,
                   trace_sha: Optional[str] = None) -> RunOutput:
    """Execute one configured run; on divergence, keep the partial rows."""
    eff = cfg.scaled()
    root = SeededStream(eff.seed)
    objective = build_objective(eff, root)
    process = make_link_process(eff.link, eff.m)
    algo = AlgorithmConfig(variant=eff.algorithm, s=eff.s, eta=eff.eta,
                           local_compute=eff.local_compute)
    started = time.monotonic()
    try:
        result = run_experiment(algo, objective, process, eff.T, root.child("sim"),
                                trace=trace, batch_size=eff.batch_size)
        rows, completed, failure = result.rows, True, None
        code = 0
    except DivergedRunError as err:
        result, rows, completed, failure = None, err.rows, False, err.round_index
        code = 2
    wall = time.monotonic() - started
    manifest = _manifest(cfg, seed_source, len(rows), completed, failure, wall, trace_sha)
    return RunOutput(result=result, rows=rows, manifest=manifest, exit_code=code)


def write_run_outputs(out_dir, output: RunOutput, name: str = "") -> dict:
    os.makedirs(out_dir, exist_ok=True)
    prefix = f"{name}_" if name else ""
    metrics_path = os.path.join(out_dir, f"{prefix}metrics.csv")
    manifest_path = os.path.join(out_dir, f"{prefix}manifest.json")
    write_metrics_csv(metrics_path, output.rows)
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        json.dump(output.manifest, fh, indent=2)
        fh.write("\n")
    return {"metrics": metrics_path, "manifest": manifest_path}


def simulate_command(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                     seed_source: str = "config") -> int:
    out = run_simulation(cfg, seed_source=seed_source)
    write_run_outputs(out_dir or cfg.out, out)
    return out.exit_code


def resolve_seed_override(cfg: ExperimentConfig) -> tuple:
    """Apply the FEDSIM_SEED environment override, if present."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return cfg, "config"
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None
    return replace(cfg, seed=seed), "env"


# ---------------------------------------------------------------------------
# Reproduction grids
# ---------------------------------------------------------------------------

def _scaled_counts(scale: float, base_m: int, base_t: int) -> tuple:
    if scale not in (1.0, 0.5, 0.2, 0.1):
        raise ConfigError("scale must be one of 1, 0.5, 0.2, 0.1")
    return max(1, round(base_m * scale)), max(1, round(base_t * scale))


def reproduce_fig2(scale: float, out_dir, seed: int = 1234) -> dict:
    """Bias comparison grid on the quadratic counterexample.

    Grid: four (p0, p1) pairs x {fedavg, fedpbc} x {all, active_only},
    each pair sharing one link trace across the four variants.  Emits
    per-run metrics and a comparison table against the closed-form
    stationary point of the broadcast-first algorithm.
    """
    m, T = _scaled_counts(scale, FIG2_BASE["m"], FIG2_BASE["T"])
    d = m  # target dimension scales with the fleet
    os.makedirs(out_dir, exist_ok=True)
    root = SeededStream(seed)
    targets = build_quadratic_targets(m, d, root.child("targets"))
    objective = QuadraticObjective(targets)
    x_star = objective.global_optimum()

    summary = []
    for p0, p1 in FIG2_GRID:
        tag = f"p{p0:g}-{p1:g}".replace(".", "")
        link = f"halves:{p0:g},{p1:g}"
        process = make_link_process(link, m)
        trace = build_trace(process, T, root.child("trace", tag))
        trace_path = os.path.join(out_dir, f"{tag}_trace.csv")
        write_trace_csv(trace_path, trace)
        sha = trace_checksum(trace_path)

        weights = fedavg_limit_integral(process.p)
        predicted = weights.limit_point(targets)
        oracle_gap = float(np.linalg.norm(predicted - x_star))

        for variant in ("fedavg", "fedpbc"):
            for mode in ("all", "active_only"):
                cfg = ExperimentConfig(
                    experiment="counterexample", algorithm=variant, local_compute=mode,
                    m=m, d=d, s=FIG2_BASE["s"], eta=FIG2_BASE["eta"], T=T,
                    batch_size=32, alpha=1.0, beta=1.0, samples_per_client=250,
                    link=link, seed=seed, scale=1.0, out=str(out_dir))
                out = run_simulation(cfg, trace=trace, trace_sha=sha)
                name = f"{tag}_{variant}_{mode}"
                write_run_outputs(out_dir, out, name=name)
                final = out.rows[-1] if out.rows else None
                summary.append({
                    "p0": p0, "p1": p1, "algorithm": variant, "local_compute": mode,
                    "final_grad_norm": None if final is None else final.grad_norm,
                    "oracle_gap": oracle_gap,
                    "final_global_distance_to_prediction": (
                        None if out.result is None else
                        float(np.linalg.norm(out.result.final_state.global_model - predicted))),
                })

    table_path = os.path.join(out_dir, "comparison.csv")
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("p0,p1,algorithm,local_compute,final_grad_norm,oracle_gap,"
                 "final_global_distance_to_prediction\n")
        for row in summary:
            fh.write(",".join([
                format_real(row["p0"]), format_real(row["p1"]), row["algorithm"],
                row["local_compute"],
                "" if row["final_grad_norm"] is None else format_real(row["final_grad_norm"]),
                format_real(row["oracle_gap"]),
                "" if row["final_global_distance_to_prediction"] is None
                else format_real(row["final_global_distance_to_prediction"]),
            ]) + "\n")
    return {"summary": summary, "table": table_path}


def reproduce_fig3(scale: float, out_dir, seed: int = 1234) -> dict:
    """Softmax-regression comparison under the time-varying Zipf schedule.

    Generates the heterogeneous dataset once, samples one shared link
    trace, runs both algorithms on it, and writes a summary comparing
    final train loss and test accuracy.
    """
    m, T = _scaled_counts(scale, FIG3_BASE["m"], FIG3_BASE["T"])
    os.makedirs(out_dir, exist_ok=True)
    link = f"zipf:{FIG3_BASE['zipf_a']:g},{FIG3_BASE['zipf_n']},{FIG3_BASE['zipf_floor']:g}"
    root = SeededStream(seed)
    process = make_link_process(link, m)
    trace = build_trace(process, T, root.child("trace"))
    trace_path = os.path.join(out_dir, "trace.csv")
    write_trace_csv(trace_path, trace)
    sha = trace_checksum(trace_path)

    finals = {}
    for variant in ("fedavg", "fedpbc"):
        cfg = ExperimentConfig(
            experiment="synthetic", algorithm=variant, local_compute="all",
            m=m, d=0, s=FIG3_BASE["s"], eta=FIG3_BASE["eta"], T=T,
            batch_size=FIG3_BASE["batch_size"], alpha=1.0, beta=1.0,
            samples_per_client=250, link=link, seed=seed, scale=1.0, out=str(out_dir))
        out = run_simulation(cfg, trace=trace, trace_sha=sha)
        write_run_outputs(out_dir, out, name=variant)
        last = out.rows[-1]
        finals[variant] = {"train_loss": last.train_loss,
                           "test_accuracy": last.test_accuracy}

    summary = {
        "m": m, "T": T, "link": link, "seed": seed,
        "fedavg": finals["fedavg"], "fedpbc": finals["fedpbc"],
        "fedpbc_train_loss_leq_fedavg":
            finals["fedpbc"]["train_loss"] <= finals["fedavg"]["train_loss"],
        "fedpbc_test_accuracy_geq_fedavg":
            finals["fedpbc"]["test_accuracy"] >= finals["fedavg"]["test_accuracy"],
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


# ---------------------------------------------------------------------------
# Mixing / oracle reports (depth behind the CLI subcommands)
# ---------------------------------------------------------------------------

def mixing_report(p_rounds: Sequence[np.ndarray]) -> List[dict]:
    """Per-round spectral diagnostics plus a summary with the running max.

    The product of per-round rho values is reported as an optional tighter
    diagnostic only; the certified quantity is the maximum against the
    activation-floor bound.
    """
    records = []
    rho_max = 0.0
    rho_prod = 1.0
    floor = 1.0
    for t, p in enumerate(p_rounds):
        M = expected_square_exact(p)
        r = rho(M)
        c = float(np.min(p))
        floor = min(floor, c)
        bound = ergodicity_bound(c, p.size)
        lower = entrywise_lower_bound(c, p.size)
        rho_max = max(rho_max, r)
        rho_prod *= r
        records.append({
            "type": "round", "round": t, "m": int(p.size), "floor": c,
            "entries": [[float(v) for v in row] for row in M.entries],
            "rho": r, "ergodicity_bound": bound,
            "rho_within_bound": bool(r <= bound),
            "entry_lower_bound": lower,
            "entries_above_lower_bound": bool(np.all(M.entries >= lower - 1e-12)),
        })
    records.append({
        "type": "summary", "rounds": len(records), "rho_max": rho_max,
        "ergodicity_bound": ergodicity_bound(floor, p_rounds[0].size),
        "rho_max_within_bound": bool(rho_max <= ergodicity_bound(floor, p_rounds[0].size)),
        "rho_product_diagnostic": rho_prod,
    })
    return records


def oracle_report(p: np.ndarray, targets: Optional[np.ndarray] = None) -> List[dict]:
    weights = fedavg_limit_integral(p)
    records = [{"type": "weights", "method": weights.method,
                "w": [float(v) for v in weights.w]}]
    if targets is not None:
        targets = np.asarray(targets, dtype=float)
        predicted = weights.limit_point(targets)
        x_star = targets.mean(axis=1)
        records.append({
            "type": "limit", "point": [float(v) for v in predicted],
            "distance_to_optimum": float(np.linalg.norm(predicted - x_star)),
        })
    return records
