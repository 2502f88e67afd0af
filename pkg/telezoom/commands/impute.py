# -*- coding: utf-8 -*-
"""
🔮 Impute Command
Run a checkpoint (or a baseline) over coarse windows, optionally repairing with CEM
"""

import argparse
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from telezoom.cem import enforce_many
from telezoom.commands.common import add_override, constraint_path, load_constraints, output_dir
from telezoom.config import RunConfig
from telezoom.errors import ConfigError, DataError
from telezoom.evalkit import KnnBaseline, linear_baseline
from telezoom.model import Imputer
from telezoom.series import Domain, FineSeries, WindowDataset
from telezoom.storage import read_records, write_frame, write_records
from telezoom.utils.manifest import write_manifest

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("impute", help="impute fine-grained windows from coarse inputs")
    parser.add_argument("--input", required=True, help="record file with the coarse windows")
    parser.add_argument("--checkpoint", help="trained model checkpoint")
    parser.add_argument("--baseline", choices=["knn", "linear"], help="use a baseline instead of a checkpoint")
    parser.add_argument("--train", dest="train_file", help="training record file (knn baseline)")
    parser.add_argument("--val", dest="val_file", help="validation record file for choosing K (knn baseline)")
    parser.add_argument("--k", type=int, help="fixed K for the knn baseline")
    parser.add_argument("--enforce", dest="enforce", action="store_true", default=None, help="repair with CEM")
    parser.add_argument("--no-enforce", dest="enforce", action="store_false")
    parser.add_argument("--constraints", help="constraint file, or a file name in TELEZOOM_CONSTRAINTS_DIR")
    parser.add_argument("--method", help="method name recorded in the output header")
    parser.add_argument("--out", help="output directory")
    add_override(parser, "--time-budget", "cem.time_budget_s", type=float, help="CEM seconds per window")
    add_override(parser, "--fallback", "cem.fallback", choices=["drop_operational", "none"])
    add_override(parser, "--channel-bound", "cem.channel_bound", type=float, help="upper bound M for count_pos")
    parser.set_defaults(handler=run)


@dataclass
class ImputeOutcome:
    records: Path
    outputs: List[Path] = field(default_factory=list)
    inputs: List[Path] = field(default_factory=list)
    infeasible_rate: Optional[float] = None
    relaxed_rate: Optional[float] = None


def _baseline_outputs(kind: str, data: WindowDataset, train_file, val_file, k) -> np.ndarray:
    if kind == "linear":
        return np.stack([linear_baseline(ex.input, data.target).values for ex in data.examples])
    if not train_file:
        raise ConfigError("The knn baseline needs --train")
    knn = KnnBaseline(read_records(train_file)[0])
    if k is None:
        k = knn.select_k(read_records(val_file)[0]) if val_file else min(5, len(knn))
    return knn.predict([ex.input for ex in data.examples], k)


def impute(
    cfg: RunConfig,
    out_dir: Path,
    input_path: Path,
    *,
    checkpoint: Optional[str] = None,
    baseline: Optional[str] = None,
    train_file: Optional[str] = None,
    val_file: Optional[str] = None,
    k: Optional[int] = None,
    enforce: bool = False,
    constraints: Optional[str] = None,
    method: Optional[str] = None,
) -> ImputeOutcome:
    """Write imputed.jsonl (imputed values in the target field) and, with CEM, repair_report.csv"""
    data, _ = read_records(input_path)
    if not len(data):
        raise DataError(f"{input_path}: no windows to impute")
    if bool(checkpoint) == bool(baseline):
        raise ConfigError("Give exactly one of --checkpoint or --baseline")
    data = data.with_examples(sorted(data.examples, key=lambda ex: ex.example_id))
    outcome = ImputeOutcome(Path(out_dir) / "imputed.jsonl", inputs=[Path(input_path)])

    if checkpoint:
        model = Imputer.load(checkpoint)
        if not model.trained:
            logger.warning(f"⚠️ {checkpoint} holds an untrained model")
        outputs = model.predict([ex.input for ex in data.examples])
        domain, target = model.domain, model.target
        method = method or model.mode
        outcome.inputs.append(Path(checkpoint))
    else:
        outputs = _baseline_outputs(baseline, data, train_file, val_file, k)
        domain, target = data.domain, data.target
        method = method or baseline
        outcome.inputs.extend(Path(p) for p in (train_file, val_file) if p)

    out_domain = Domain.NONNEG_REAL
    if enforce:
        cset = load_constraints(cfg, data, constraints)
        if constraints:
            outcome.inputs.append(constraint_path(constraints))
        repaired, report = enforce_many(data.examples, outputs, cset, cfg.cem, domain=domain, channel=target,
                                        granularity_ms=data.granularity_ms)
        outputs = np.stack([s.values for s in repaired])
        outcome.outputs.append(write_frame(Path(out_dir) / "repair_report.csv", report))
        outcome.infeasible_rate = float(report["infeasible"].mean())
        outcome.relaxed_rate = float((report["relaxed"] != "").mean())
        if not report["infeasible"].any():
            out_domain = domain
        method = f"{method}+cem"

    imputed = data.with_examples([
        replace(ex, target=FineSeries(target, values, data.granularity_ms, out_domain), class_targets=())
        for ex, values in zip(data.examples, outputs)
    ])
    imputed.domain = out_domain
    write_records(outcome.records, imputed, {"method": method, "enforced": bool(enforce)})
    outcome.outputs.insert(0, outcome.records)
    return outcome


def run(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = output_dir(args, cfg, "impute")
    enforce = cfg.cem.enabled if args.enforce is None else args.enforce
    logger.info(f"🔄 Imputing {args.input}{' with CEM' if enforce else ''}")
    outcome = impute(
        cfg, out, Path(args.input), checkpoint=args.checkpoint, baseline=args.baseline,
        train_file=args.train_file, val_file=args.val_file, k=args.k, enforce=enforce,
        constraints=args.constraints, method=args.method,
    )
    extra = {"enforced": enforce}
    if outcome.infeasible_rate is not None:
        extra.update(infeasible_rate=outcome.infeasible_rate, relaxed_rate=outcome.relaxed_rate)
    write_manifest(out, "impute", cfg.to_dict(), inputs=outcome.inputs, outputs=outcome.outputs,
                   args=args.replay, extra=extra)
    logger.info(f"✅ Imputed windows written to {outcome.records}")
    return 0
