"""Command-line entry point: ``python -m fedsim <subcommand> ...``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error,
3 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ACCEPT = 0, 1, 2, 3

log = logging.getLogger("fedsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _defaults_text() -> str:
    cfg = ExperimentConfig()
    lines = ["config keys (defaults):"]
    lines += [f"  {f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable, beats the config file")
    common.add_argument("--outdir", help="output directory (default: $FEDSIM_OUTDIR or ./results)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="fedsim", description="FedSmart federated learning simulator.",
                     epilog=_defaults_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                              epilog=_defaults_text(), formatter_class=argparse.RawDescriptionHelpFormatter)

    add("run", "run one experiment and write accuracy.csv, weights.csv, summary.json")
    sweep = add("sweep", "run every strategy x seed combination")
    sweep.add_argument("--seeds", default="0", help="comma-separated master seeds (default: 0)")
    sweep.add_argument("--strategies", default=",".join(["fedsmart", "fedavg", "local"]),
                       help="comma-separated strategies (default: fedsmart,fedavg,local)")
    add("gen-data", "write the synthetic client partitions as client_<id>.csv")
    for name, text in (("serve", "run the TCP server for a distributed experiment"),
                       ("client", "run one TCP client of a distributed experiment")):
        p = add(name, text)
        p.add_argument("--host", default="127.0.0.1", help="(default: 127.0.0.1)")
        p.add_argument("--port", type=int, default=7070, help="(default: 7070)")
        if name == "client":
            p.add_argument("--client-id", type=int, required=True)
    accept = add("accept", "run the acceptance criteria and print one line per criterion")
    accept.add_argument("--criteria", help="comma-separated criterion numbers (default: all)")
    return parser


def _int_list(text: str, what: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated integers, got {text!r}") from None


def _outdir(args) -> Path:
    return Path(args.outdir or os.environ.get("FEDSIM_OUTDIR") or "results")


def cmd_run(cfg, args) -> int:
    from .engine import run_experiment
    from .report import ReportBundle, write_bundle

    bundle = ReportBundle(cfg, run_experiment(cfg))
    target = write_bundle(bundle, _outdir(args))
    print(f"{cfg.strategy} seed {cfg.master_seed}: mean final accuracy {bundle.summary['mean']:.4f} -> {target}")
    return EXIT_OK


def cmd_sweep(cfg, args) -> int:
    from .engine import run_sweep
    from .report import ReportBundle, write_bundle, write_sweep_csv

    seeds = _int_list(args.seeds, "--seeds")
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        cfg.replace(strategy=s)  # surfaces unknown names as config errors before any run
    result = run_sweep(cfg, strategies, seeds)
    outdir = _outdir(args)
    for (strategy, seed), run in sorted(result.runs.items()):
        bundle = ReportBundle(run.config, run.records)
        write_bundle(bundle, outdir)
        print(f"{strategy} seed {seed}: mean final accuracy {bundle.summary['mean']:.4f}")
    outdir.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(result.rows, outdir / "sweep.csv")
    for msg in result.errors.values():
        print(f"failed: {msg}", file=sys.stderr)
    return EXIT_RUNTIME if result.errors else EXIT_OK


def cmd_gen_data(cfg, args) -> int:
    from .data import build_paired_clients, dump_partitions

    paths = dump_partitions(build_paired_clients(cfg), _outdir(args))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_serve(cfg, args) -> int:
    from .remote import serve

    final = serve(cfg, args.host, args.port,
                  on_ready=lambda addr: print(f"listening on {addr[0]}:{addr[1]}", flush=True))
    print(json.dumps({"final_model": None if final is None else final.tolist()}))
    return EXIT_OK


def cmd_client(cfg, args) -> int:
    from .remote import run_client

    out = run_client(cfg, args.client_id, args.host, args.port)
    print(json.dumps({
        "client_id": out.client_id,
        "final_val_accuracy": out.val_accuracy[-1] if out.val_accuracy else None,
        "params": out.params.tolist(),
        "weights": None if out.weights is None else out.weights.tolist(),
    }))
    return EXIT_OK


def cmd_accept(cfg, args) -> int:
    from .acceptance import run_all

    numbers = _int_list(args.criteria, "--criteria") if args.criteria else None
    results = run_all(numbers)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_ACCEPT if failed else EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "gen-data": cmd_gen_data,
    "serve": cmd_serve,
    "client": cmd_client,
    "accept": cmd_accept,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
