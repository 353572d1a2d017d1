"""Command-line entry point.

Subcommands: simulate (run the experiment, write CSVs), analyze
(stability and bound reports without simulation), compare (bound vs
simulation), validate (config check only). Exit codes: 0 success,
1 validation failure, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .analysis import (
    DimensionCapExceeded,
    UnstableConfiguration,
    UnstableF,
    SingularWeighting,
    bound_report,
    stability_report,
)
from .diffusion import NonFiniteUpdate, TriggerPolicy
from .harness import (
    ParseError,
    ValidationError,
    build_experiment_inputs,
    load_config,
    run_bound_comparison,
    run_experiment,
)
from .metrics import steady_state
from .topology import ConnectivityFailure, DisconnectedGraph, InvalidEdge

_VALIDATION_ERRORS = (ParseError, ValidationError, InvalidEdge)
_RUNTIME_ERRORS = (
    NonFiniteUpdate,
    UnstableConfiguration,
    UnstableF,
    SingularWeighting,
    DimensionCapExceeded,
    ConnectivityFailure,
    DisconnectedGraph,
)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="eblms",
        description="Event-based diffusion LMS simulator and analysis toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("simulate", "run the configured experiment and write curve CSVs"),
        ("analyze", "evaluate stability conditions and bounds without simulating"),
        ("compare", "run the simulation and compare against the bounds"),
        ("validate", "check the config file and exit"),
    ]:
        cmd = sub.add_parser(name, help=doc)
        cmd.add_argument("config", help="path to a key=value config file")
        cmd.add_argument("--out", default=None, help="output directory override")
        cmd.add_argument("--seed", type=int, default=None, help="master seed override")
        cmd.add_argument(
            "--threads", type=int, default=1,
            help="worker threads (affects speed only, never results)",
        )
    return parser


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    return config


def _cmd_simulate(args) -> int:
    config = _load(args)
    result = run_experiment(config, threads=args.threads)
    for label, curve in result.curves.items():
        summary = steady_state(curve, window_fraction=config.steady_state_fraction)
        print(
            f"{label}: steady-state MSD {summary.msd_ss_db:.2f} dB, "
            f"ENTR {summary.entr_ss:.3f}, settle instant {summary.settle_instant}"
        )
    print(f"outputs written to {result.out_dir}")
    return 0


def _cmd_analyze(args) -> int:
    config = _load(args)
    _, weights, profiles, _ = build_experiment_inputs(config)
    stab = stability_report(weights, profiles)
    chunks = ["[stability]", stab.to_text()]
    for d in config.delta:
        policies = [TriggerPolicy.identity(config.m, d) for _ in range(config.n_nodes)]
        rep = bound_report(weights, profiles, policies)
        chunks.append(f"[bounds delta={d:g}]")
        chunks.append(rep.to_text())
    report = "\n".join(chunks)
    print(report, end="")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "analyze.txt").write_text(report, encoding="utf-8")
    return 0


def _cmd_compare(args) -> int:
    config = _load(args)
    comparisons = run_bound_comparison(config, threads=args.threads)
    chunks = [c.to_text() for c in comparisons]
    report = "\n".join(chunks)
    print(report, end="")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.txt").write_text(report, encoding="utf-8")
    return 0


def _cmd_validate(args) -> int:
    config = _load(args)
    print(f"config OK (hash {config.config_hash()[:12]})")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "analyze": _cmd_analyze,
    "compare": _cmd_compare,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
