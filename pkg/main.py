#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
🔭 Telezoom
Main Entry Point - fine-grained telemetry imputation pipeline
"""

import argparse
import asyncio
import logging
import sys
from typing import List, Optional

from telezoom import __version__
from telezoom.commands import register_commands
from telezoom.commands.common import argv_tail, resolve_config
from telezoom.config import RunConfig, config
from telezoom.errors import ConfigError, TelezoomError
from telezoom.utils.manifest import load_manifest, verify_inputs

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or config.LOG_LEVEL).upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(config.LOG_FILE, encoding='utf-8'),
            logging.StreamHandler()
        ]
    )


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with 1 like every other configuration error"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> CliParser:
    parser = CliParser(prog="telezoom", description="Impute fine-grained telemetry from coarse measurements")
    parser.add_argument("--version", action="version", version=f"telezoom {__version__}")
    parser.add_argument("--config", help="YAML run config")
    parser.add_argument("--manifest", help="re-run the command recorded in a manifest.json")
    parser.add_argument("--log-level", help="override LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    register_commands(subparsers)
    return parser


def _replay(parser: CliParser, manifest_path: str):
    """Parse the recorded command line and return it with the recorded resolved config"""
    body = load_manifest(manifest_path)
    verify_inputs(body)
    argv = [body["command"], *body["args"].get("argv", [])]
    args = parser.parse_args(argv)
    args.replay = {"argv": argv[1:]}
    logger.info(f"🔄 Replaying '{' '.join(argv)}' from {manifest_path}")
    return args, RunConfig.from_dict(body["config"])


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        base = None
        if args.manifest:
            if args.command:
                raise ConfigError("--manifest replays a recorded command; do not give another one")
            args, base = _replay(parser, args.manifest)
        elif not args.command:
            parser.print_help(sys.stderr)
            return 1
        else:
            args.replay = {"argv": argv_tail(argv, args.command)}

        cfg = resolve_config(args, base)
        return args.handler(args, cfg) or 0

    except TelezoomError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("⚠️ Stopped by user")
        return 130
    except Exception as e:
        logger.error(f"❌ Critical error: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    # Windows compatibility for the worker pool's event loop
    if asyncio.get_event_loop_policy().__class__.__name__ == 'WindowsProactorEventLoopPolicy':
        asyncio.set_event_loop_policy(asyncio.WindowsSelectorEventLoopPolicy())

    sys.exit(main())
