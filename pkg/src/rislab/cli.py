"""Command line entry point: ``rislab {mc,codebook,serve-ric,serve-agent,e2e}``."""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys

from . import harness
from .e2proto import MalformedFrame
from .optimizer import OptimizerError
from .ric import SessionFault
from .agent import AgentError

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (section.key = value lines)")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, help="overrides mc.seed")
    common.add_argument("--log-level", choices=list(LOG_LEVELS), default="warn")

    p = argparse.ArgumentParser(prog="rislab", description="RIS-assisted InF link emulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("mc", parents=[common], help="Monte Carlo sweep, CSV output")
    cb = sub.add_parser("codebook", parents=[common], help="build a codebook file")
    cb.add_argument("--position", action="append", default=None, metavar="X,Y,Z",
                    help="codebook UE position (repeatable); defaults to codebook.positions")
    sub.add_parser("serve-ric", parents=[common], help="run the controller until signalled")
    sub.add_parser("serve-agent", parents=[common], help="run the E2 agent until signalled")
    sub.add_parser("e2e", parents=[common], help="controller plus one agent, closed loop")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=LOG_LEVELS[args.log_level], format="%(levelname)s %(name)s %(message)s")
    try:
        cfg = harness.load_config(args.config)
        if args.seed is not None:
            cfg = cfg.override(mc__seed=args.seed)
    except (harness.ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG

    try:
        if args.command == "mc":
            if args.out:
                harness.cmd_mc(cfg, args.out)
            else:
                harness.write_mc_csv(cfg, sys.stdout)
        elif args.command == "codebook":
            if not args.out:
                print("codebook needs --out", file=sys.stderr)
                return harness.EXIT_CONFIG
            positions = [harness._point(p) for p in args.position] if args.position else None
            harness.cmd_codebook(cfg, args.out, positions)
        elif args.command == "serve-ric":
            return asyncio.run(harness.serve_ric(cfg))
        elif args.command == "serve-agent":
            return asyncio.run(harness.serve_agent(cfg))
        elif args.command == "e2e":
            res = harness.cmd_e2e(cfg, args.out)
            if res.exit_code:
                print(f"e2e failed: {res.message}", file=sys.stderr)
            return res.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return harness.EXIT_RUNTIME
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except (OptimizerError, MalformedFrame, SessionFault, AgentError, ConnectionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_RUNTIME
    return harness.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
