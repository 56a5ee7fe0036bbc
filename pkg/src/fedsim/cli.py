"""Command-line interface.

Subcommands: simulate, reproduce-fig2, reproduce-fig3, mixing, oracle,
gendata.  All file output is UTF-8 with reals at 17 significant digits.
The FEDSIM_SEED environment variable overrides the config seed for
``simulate`` (recorded in the manifest).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import parse_config
from .errors import FedsimError
from .harness import (mixing_report, oracle_report, reproduce_fig2, reproduce_fig3,
                      resolve_seed_override, simulate_command)
from .objectives import generate_synthetic, save_dataset_csv
from .streams import SeededStream


def _parse_p_argument(inline: str | None, path: str | None) -> list:
    """Probability vectors, either one inline list or CSV rows (one vector
    per line)."""
    if (inline is None) == (path is None):
        raise FedsimError("provide exactly one of --p or --p-file")
    if inline is not None:
        return [np.array([float(v) for v in inline.split(",")])]
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(np.array([float(v) for v in line.split(",")]))
    if not rows:
        raise FedsimError(f"no probability rows found in {path}")
    return rows


def _load_targets(path: str) -> np.ndarray:
    # One row per client; transposed to the d x m layout used internally.
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.array(rows).T


def _emit_json_lines(records, out_path: str | None) -> None:
    text = "\n".join(json.dumps(rec) for rec in records) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one configured experiment")
    p_sim.add_argument("--config", required=True, help="key=value config file")
    p_sim.add_argument("--out", default=None, help="output directory (overrides config)")

    for name in ("reproduce-fig2", "reproduce-fig3"):
        p_fig = sub.add_parser(name, help=f"{name.replace('-', ' ')} grid")
        p_fig.add_argument("--scale", type=float, default=0.1,
                           choices=[1.0, 0.5, 0.2, 0.1],
                           help="factor applied to fleet size and round count")
        p_fig.add_argument("--out", required=True)
        p_fig.add_argument("--seed", type=int, default=1234)

    p_mix = sub.add_parser("mixing", help="expected-square mixing diagnostics")
    p_mix.add_argument("--p", default=None, help="comma-separated probabilities")
    p_mix.add_argument("--p-file", default=None,
                       help="CSV of probability vectors, one round per line")
    p_mix.add_argument("--out", default=None, help="write JSON lines here instead of stdout")

    p_or = sub.add_parser("oracle", help="closed-form limit weights and bias")
    p_or.add_argument("--p", default=None)
    p_or.add_argument("--p-file", default=None)
    p_or.add_argument("--u", default=None, help="CSV of client targets, one row per client")
    p_or.add_argument("--out", default=None)

    p_gen = sub.add_parser("gendata", help="generate a synthetic dataset file")
    p_gen.add_argument("--alpha", type=float, required=True)
    p_gen.add_argument("--beta", type=float, required=True)
    p_gen.add_argument("--m", type=int, required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--samples", type=int, default=250)
    p_gen.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            with open(args.config, "r", encoding="utf-8") as fh:
                cfg = parse_config(fh.read())
            cfg, seed_source = resolve_seed_override(cfg)
            return simulate_command(cfg, out_dir=args.out, seed_source=seed_source)
        if args.command == "reproduce-fig2":
            reproduce_fig2(args.scale, args.out, seed=args.seed)
            return 0
        if args.command == "reproduce-fig3":
            reproduce_fig3(args.scale, args.out, seed=args.seed)
            return 0
        if args.command == "mixing":
            rows = _parse_p_argument(args.p, args.p_file)
            _emit_json_lines(mixing_report(rows), args.out)
            return 0
        if args.command == "oracle":
            rows = _parse_p_argument(args.p, args.p_file)
            targets = _load_targets(args.u) if args.u else None
            records = []
            for p in rows:
                records.extend(oracle_report(p, targets))
            _emit_json_lines(records, args.out)
            return 0
        if args.command == "gendata":
            dataset = generate_synthetic(args.alpha, args.beta, args.m, args.samples,
                                         SeededStream(args.seed))
            save_dataset_csv(args.out, dataset)
            return 0
    except FedsimError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
