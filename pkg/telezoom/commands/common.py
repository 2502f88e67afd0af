# -*- coding: utf-8 -*-
"""
🧰 Command Helpers
Config resolution, output directories and constraint loading shared by sub-commands
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from telezoom.config import RunConfig, config
from telezoom.constraints import ConstraintSet, library_for_case
from telezoom.errors import DataError
from telezoom.series import CoarsenerKind, WindowDataset

logger = logging.getLogger(__name__)

OVERRIDE_PREFIX = "cfg:"
CONSTRAINT_SUFFIX = ".cons"


def add_override(parser: argparse.ArgumentParser, flag: str, key: str, **kwargs) -> None:
    """A flag that overrides the dotted run-config key when given"""
    parser.add_argument(flag, dest=f"{OVERRIDE_PREFIX}{key}", default=None, **kwargs)


def overrides_from(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        name[len(OVERRIDE_PREFIX):]: value
        for name, value in vars(args).items() if name.startswith(OVERRIDE_PREFIX)
    }


def resolve_config(args: argparse.Namespace, base: Optional[RunConfig] = None) -> RunConfig:
    """defaults <- --config YAML (or a replayed manifest) <- command-line flags"""
    if base is None:
        base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    return base.with_overrides(overrides_from(args))


def output_dir(args: argparse.Namespace, cfg: RunConfig, default_name: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(config.OUTPUT_ROOT) / default_name


def constraint_path(ref: str) -> Path:
    """A constraint file path, or the name of a file in the constraints directory ('queue' or 'link.cons')"""
    path = Path(ref)
    if path.exists():
        return path
    shipped = Path(config.CONSTRAINTS_DIR) / (ref if ref.endswith(CONSTRAINT_SUFFIX) else f"{ref}{CONSTRAINT_SUFFIX}")
    return shipped if shipped.exists() else path


def load_constraints(cfg: RunConfig, dataset: WindowDataset, path: Optional[str] = None) -> ConstraintSet:
    """Constraint file from the flag or config, else the built-in library for the dataset case"""
    path = path or cfg.constraint_file
    if path:
        cset = ConstraintSet.load(constraint_path(path))
    else:
        entries = dataset.examples[0].input.entries if dataset.examples else ()
        offset = next((e.spec.offset for e in entries if e.spec.kind is CoarsenerKind.PERIODIC),
                      cfg.data.periodic_offset)
        cset = library_for_case(dataset.case, burst_fraction=cfg.burst_fraction, periodic_offset=offset)
        logger.info(f"✅ Using built-in '{dataset.case}' constraints: {', '.join(cset.names)}")
    cset.check_bindings(dataset.layout, dataset.scalar_names)
    return cset


def target_matrix(dataset: WindowDataset) -> np.ndarray:
    """Targets [N, W] ordered by window id"""
    examples = sorted(dataset.examples, key=lambda ex: ex.example_id)
    if any(ex.target is None for ex in examples):
        raise DataError("Record file has windows without values")
    return np.stack([ex.target.values for ex in examples])


def argv_tail(argv: Sequence[str], command: str) -> list:
    """Arguments after the sub-command name, recorded for --manifest replay"""
    argv = list(argv)
    return argv[argv.index(command) + 1:] if command in argv else argv
