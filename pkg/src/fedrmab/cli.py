"""Command-line interface.

Subcommands: ``run`` (one config to CSV), ``compare`` (several policy kinds
on one instance), ``sweep`` (vary the agent or selection count),
``whittle-table`` (closed vs numeric index grid), ``serve`` / ``agent``
(multi-process federation).  Relative output paths resolve under
``$FED_RMAB_OUTDIR`` when set.  Exit codes: 0 success, 2 configuration
error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Optional, Sequence

from .config import ExperimentConfig, POLICY_KINDS
from .env import GilbertElliotDynamics
from .errors import ConfigError, ProtocolError
from .harness import render_csv, run_monte_carlo, write_csv
from .whittle import whittle_closed, whittle_numeric


def _load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_json(text)


def _cmd_run(args) -> int:
    config = _load_config(args.config)
    out = args.out or "results.csv"
    run_monte_carlo(config, workers=args.workers, csv_path=out)
    print(write_path_message(out))
    return 0


def _cmd_compare(args) -> int:
    base = _load_config(args.config)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in POLICY_KINDS]
    if unknown:
        raise ConfigError(f"unknown policy kinds: {unknown}")
    merged = []
    for kind in kinds:
        config = dataclasses.replace(base, policy=kind)
        merged.extend(run_monte_carlo(config, workers=args.workers))
    out = args.out or "compare.csv"
    write_csv(merged, base.n_arms, out)
    print(write_path_message(out))
    return 0


def _cmd_sweep(args) -> int:
    base = _load_config(args.config)
    if args.param not in ("m_agents", "k_select"):
        raise ConfigError(f"sweep parameter must be m_agents or k_select, got {args.param}")
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"sweep values must be integers: {args.values}") from exc
    if not values:
        raise ConfigError("no sweep values given")
    merged = []
    for value in values:
        config = dataclasses.replace(base, **{args.param: value})
        records = run_monte_carlo(config, workers=args.workers)
        label = f"{config.policy}[{args.param}={value}]"
        for record in records:
            record.policy = label
        merged.extend(records)
    out = args.out or "sweep.csv"
    write_csv(merged, base.n_arms, out)
    print(write_path_message(out))
    return 0


def _cmd_whittle_table(args) -> int:
    if args.grid < 2:
        raise ConfigError(f"grid must have at least 2 points, got {args.grid}")
    try:
        dyn = GilbertElliotDynamics(args.theta01, args.theta11)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print("b,w_closed,w_numeric,abs_diff")
    for i in range(args.grid):
        b = i / (args.grid - 1)
        closed = whittle_closed(dyn, args.rate, b)
        numeric = whittle_numeric(dyn, args.rate, b, tol=args.tol)
        print(
            f"{b:.12g},{closed:.12g},{numeric:.12g},{abs(closed - numeric):.12g}"
        )
    return 0


def _cmd_serve(args) -> int:
    from .fednet import serve

    config = _load_config(args.config)
    records = serve(args.bind, config, trial=args.trial)
    out = args.out or "serve.csv"
    write_csv(records, config.n_arms, out)
    print(write_path_message(out))
    return 0


def _cmd_agent(args) -> int:
    from .fednet import agent_run

    config = _load_config(args.config)
    agent_run(args.server, args.id, config, seed=args.seed, trial=args.trial)
    return 0


def write_path_message(path: str) -> str:
    from .harness import resolve_output_path

    return f"wrote {resolve_output_path(path)}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fed-rmab",
        description="Federated Thompson-sampling Whittle-index bandit simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config, emit CSV")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None)
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=_cmd_run)

    compare = sub.add_parser("compare", help="run several policy kinds on one instance")
    compare.add_argument("--config", required=True)
    compare.add_argument("--kinds", required=True, help="comma-separated policy kinds")
    compare.add_argument("--out", default=None)
    compare.add_argument("--workers", type=int, default=1)
    compare.set_defaults(func=_cmd_compare)

    sweep = sub.add_parser("sweep", help="vary m_agents or k_select")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True, choices=("m_agents", "k_select"))
    sweep.add_argument("--values", required=True, help="comma-separated integers")
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--workers", type=int, default=1)
    sweep.set_defaults(func=_cmd_sweep)

    table = sub.add_parser("whittle-table", help="closed vs numeric index on a belief grid")
    table.add_argument("--theta01", type=float, required=True)
    table.add_argument("--theta11", type=float, required=True)
    table.add_argument("--rate", type=float, default=1.0)
    table.add_argument("--grid", type=int, default=21)
    table.add_argument("--tol", type=float, default=1e-4)
    table.set_defaults(func=_cmd_whittle_table)

    serve_p = sub.add_parser("serve", help="federation server")
    serve_p.add_argument("--bind", required=True, help="host:port")
    serve_p.add_argument("--config", required=True)
    serve_p.add_argument("--out", default=None)
    serve_p.add_argument("--trial", type=int, default=0)
    serve_p.set_defaults(func=_cmd_serve)

    agent_p = sub.add_parser("agent", help="federation agent")
    agent_p.add_argument("--server", required=True, help="host:port")
    agent_p.add_argument("--id", type=int, required=True)
    agent_p.add_argument("--config", required=True)
    agent_p.add_argument("--seed", type=int, default=None)
    agent_p.add_argument("--trial", type=int, default=0)
    agent_p.set_defaults(func=_cmd_agent)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ProtocolError, RuntimeError, OSError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
