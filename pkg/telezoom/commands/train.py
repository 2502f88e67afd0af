# -*- coding: utf-8 -*-
"""
🏋️ Train Command
Plain or knowledge-augmented training, with optional target refinement
"""

import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from telezoom.commands.common import add_override, constraint_path, load_constraints, output_dir
from telezoom.config import RunConfig
from telezoom.errors import ConfigError
from telezoom.evalkit import plain_baseline
from telezoom.kal import KalState, fit
from telezoom.model import Imputer
from telezoom.refinement import classes_from_groups, equivalence_test, refine_dataset, train_basic_model
from telezoom.storage import read_class_sidecar, read_records, write_class_sidecar, write_frame
from telezoom.utils.manifest import write_manifest

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train an imputation model")
    parser.add_argument("--data", help="dataset directory holding train.jsonl and val.jsonl")
    parser.add_argument("--train", dest="train_file", help="training record file (overrides --data)")
    parser.add_argument("--val", dest="val_file", help="validation record file (overrides --data)")
    parser.add_argument("--mode", choices=["plain", "kal"], default="kal")
    parser.add_argument("--refine", action="store_true", default=None, help="run target refinement first")
    parser.add_argument("--constraints", help="constraint file or shipped name (kal mode)")
    parser.add_argument("--resume", help="checkpoint to warm-start from (parameters and multipliers)")
    parser.add_argument("--classes", help="stored classes.json to reuse (implies --refine)")
    parser.add_argument("--out", help="output directory")
    add_override(parser, "--epochs", "train.epochs", type=int, help="epochs per inner loop")
    add_override(parser, "--batch-size", "train.batch_size", type=int)
    add_override(parser, "--lr", "train.lr", type=float)
    add_override(parser, "--emd-weight", "train.emd_weight", type=float)
    add_override(parser, "--max-outer", "kal.max_outer", type=int)
    add_override(parser, "--seed", "model.seed", type=int, help="model initialisation seed")
    parser.set_defaults(handler=run)


@dataclass
class TrainOutcome:
    checkpoint: Path
    outputs: List[Path] = field(default_factory=list)
    inputs: List[Path] = field(default_factory=list)


def _split_paths(args_data: Optional[str], train_file: Optional[str], val_file: Optional[str]):
    train = Path(train_file) if train_file else (Path(args_data) / "train.jsonl" if args_data else None)
    if train is None:
        raise ConfigError("train needs --data or --train")
    val = Path(val_file) if val_file else (Path(args_data) / "val.jsonl" if args_data else None)
    return train, val if val is not None and val.exists() else None


def _stored_classes(classes: Optional[str], resume: Optional[str]) -> Optional[Path]:
    """An explicit classes file, else the one written next to the checkpoint being resumed"""
    if classes:
        return Path(classes)
    if resume:
        beside = Path(resume).parent / "classes.json"
        if beside.exists():
            logger.info(f"🔄 Reusing equivalence classes from {beside}")
            return beside
    return None


def train(
    cfg: RunConfig,
    out_dir: Path,
    train_path: Path,
    val_path: Optional[Path] = None,
    *,
    mode: str = "kal",
    refine: bool = False,
    constraints: Optional[str] = None,
    resume: Optional[str] = None,
    classes: Optional[str] = None,
) -> TrainOutcome:
    """Train and write model.pt, the violation history and (with refinement) classes.json"""
    out_dir = Path(out_dir)
    train_ds, _ = read_records(train_path)
    val_ds = read_records(val_path)[0] if val_path else None
    outcome = TrainOutcome(out_dir / "model.pt", inputs=[train_path] + ([val_path] if val_path else []))
    if constraints:
        outcome.inputs.append(constraint_path(constraints))

    refine = refine or bool(classes)
    if mode == "plain":
        if constraints or cfg.constraint_file:
            logger.warning("⚠️ Plain mode trains on MSE only, ignoring the constraint file")
        if refine:
            logger.warning("⚠️ Plain mode skips target refinement")
        model = plain_baseline(train_ds, cfg, val_ds)
        history = None
    else:
        cset = load_constraints(cfg, train_ds, constraints)
        refined = False
        if refine:
            sidecar = _stored_classes(classes, resume)
            if sidecar is not None:
                groups = classes_from_groups(train_ds, read_class_sidecar(sidecar))
                outcome.inputs.append(sidecar)
            else:
                basic = train_basic_model(train_ds, cfg, val_ds)
                groups = equivalence_test(train_ds, basic, cfg.refine.theta_far, cfg.refine.theta_close)
            train_ds = refine_dataset(train_ds, groups)
            refined = True
            outcome.outputs.append(write_class_sidecar(
                out_dir / "classes.json", [c.member_ids for c in groups],
                {"theta_far": cfg.refine.theta_far, "theta_close": cfg.refine.theta_close,
                 "windows": len(train_ds)},
            ))
        warm = None
        if resume:
            model = Imputer.load(resume)
            if model.kal_state:
                warm = KalState.from_payload(model.kal_state)
            outcome.inputs.append(Path(resume))
        else:
            model = Imputer.build(train_ds, cfg.model)
        result = fit(train_ds, cset, model, cfg, val=val_ds, warm_start=warm, mode="kal")
        model.refined = refined
        history = result.history

    if history is not None:
        outcome.outputs.append(write_frame(out_dir / "violation_history.csv", history))
    model.save(outcome.checkpoint)
    outcome.outputs.insert(0, outcome.checkpoint)
    return outcome


def run(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = output_dir(args, cfg, f"train_{args.mode}")
    refine = (cfg.refine.enabled if args.refine is None else args.refine) or bool(args.classes)
    train_path, val_path = _split_paths(args.data, args.train_file, args.val_file)
    logger.info(f"🔄 Training ({args.mode}{', refined' if refine else ''}) from {train_path}")
    outcome = train(cfg, out, train_path, val_path, mode=args.mode, refine=refine,
                    constraints=args.constraints, resume=args.resume, classes=args.classes)
    write_manifest(out, "train", cfg.to_dict(), inputs=outcome.inputs, outputs=outcome.outputs,
                   args=args.replay, extra={"mode": args.mode, "refine": refine})
    logger.info(f"✅ Checkpoint written: {outcome.checkpoint}")
    return 0
