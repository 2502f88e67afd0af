# -*- coding: utf-8 -*-
"""
📊 Evaluate Command
Score imputed record files against the truth file and write report tables
"""

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from telezoom.commands.common import constraint_path, load_constraints, output_dir, target_matrix
from telezoom.config import RunConfig
from telezoom.constraints import dataset_violations
from telezoom.errors import ConfigError, ShapeError
from telezoom.evalkit import DEFAULT_BURST_FRACTION, EvaluationReport, evaluate_methods, plot_overlay
from telezoom.series import WindowDataset
from telezoom.storage import read_records, write_frame
from telezoom.utils.manifest import write_manifest

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="compare imputed files against the truth")
    parser.add_argument("--truth", required=True, help="record file with the true fine-grained windows")
    parser.add_argument("--method", action="append", default=[], metavar="NAME=FILE",
                        help="imputed record file for one method (repeatable)")
    parser.add_argument("--constraints", help="constraint file or shipped name for the violation table")
    parser.add_argument("--burst-fraction", type=float, default=DEFAULT_BURST_FRACTION)
    parser.add_argument("--plots", action="store_true", help="also write PNG plots")
    parser.add_argument("--out", help="output directory")
    parser.set_defaults(handler=run)


def parse_methods(specs) -> Dict[str, Path]:
    methods = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"--method expects NAME=FILE, got '{spec}'")
        if name in methods:
            raise ConfigError(f"Method '{name}' given twice")
        methods[name] = Path(path)
    if not methods:
        raise ConfigError("evaluate needs at least one --method NAME=FILE")
    return methods


def aligned_outputs(truth: WindowDataset, name: str, imputed: WindowDataset) -> np.ndarray:
    """Imputed values ordered like the truth; raises naming the windows that do not line up"""
    truth_ids = [ex.example_id for ex in sorted(truth.examples, key=lambda ex: ex.example_id)]
    by_id = {ex.example_id: ex for ex in imputed.examples}
    missing = [i for i in truth_ids if i not in by_id]
    extra = sorted(set(by_id) - set(truth_ids))
    if missing or extra:
        raise ShapeError(f"Method '{name}' does not align with the truth: missing ids {missing[:10]}, "
                         f"extra ids {extra[:10]}")
    width = truth.context_len * truth.zoom
    bad = [i for i in truth_ids if by_id[i].target is None or len(by_id[i].target) != width]
    if bad:
        raise ShapeError(f"Method '{name}' has windows of the wrong length (expected {width}): ids {bad[:10]}")
    return np.stack([by_id[i].target.values for i in truth_ids])


def violation_table(cfg: RunConfig, truth: WindowDataset, outputs: Mapping[str, np.ndarray],
                    constraints: Optional[str]) -> pd.DataFrame:
    """Mean exact violation per method and constraint"""
    cset = load_constraints(cfg, truth, constraints)
    examples = sorted(truth.examples, key=lambda ex: ex.example_id)
    rows = []
    for method, values in outputs.items():
        per = dataset_violations(cset, values, examples, truth.domain)
        rows.append({"method": method, **{name: float(v.mean()) if v.size else 0.0 for name, v in per.items()}})
    return pd.DataFrame(rows)


def evaluate(
    cfg: RunConfig,
    out_dir: Path,
    truth_path: Path,
    methods: Mapping[str, Path],
    *,
    constraints: Optional[str] = None,
    burst_fraction: float = DEFAULT_BURST_FRACTION,
    plots: bool = False,
) -> Tuple[List[Path], EvaluationReport]:
    truth, _ = read_records(truth_path)
    truth = truth.with_examples(sorted(truth.examples, key=lambda ex: ex.example_id))
    target_matrix(truth)
    outputs = {name: aligned_outputs(truth, name, read_records(path)[0]) for name, path in methods.items()}

    report = evaluate_methods(outputs, truth, threshold_frac=burst_fraction)
    out_dir = Path(out_dir)
    written = report.write(out_dir, plots=plots)
    if constraints or cfg.constraint_file or truth.case in ("queue", "link"):
        written.append(write_frame(out_dir / "violations.csv", violation_table(cfg, truth, outputs, constraints)))
    else:
        logger.warning(f"⚠️ No constraints for case '{truth.case}', skipping the violation table")
    if plots and len(truth):
        first = truth.examples[0]
        written.append(plot_overlay(first.target, {m: v[0] for m, v in outputs.items()}, out_dir / "overlay.png"))
    return written, report


def run(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = output_dir(args, cfg, "evaluate")
    methods = parse_methods(args.method)
    logger.info(f"🔄 Evaluating {', '.join(methods)} against {args.truth}")
    written, _ = evaluate(cfg, out, Path(args.truth), methods, constraints=args.constraints,
                          burst_fraction=args.burst_fraction, plots=args.plots)
    inputs = [Path(args.truth), *methods.values()]
    if args.constraints:
        inputs.append(constraint_path(args.constraints))
    write_manifest(out, "evaluate", cfg.to_dict(), inputs=inputs, outputs=written, args=args.replay)
    logger.info(f"✅ Reports written to {out}")
    return 0
