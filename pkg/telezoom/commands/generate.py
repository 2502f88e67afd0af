# -*- coding: utf-8 -*-
"""
🚦 Generate Command
Simulate (or ingest) fine-grained traces and write train/val/test record files
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional

from telezoom.commands.common import add_override, output_dir
from telezoom.config import RunConfig
from telezoom.datagen import (
    CASE_TARGETS,
    DatasetSplits,
    IngestSchema,
    build_dataset,
    case_specs,
    ingest_csv,
    load_preset,
)
from telezoom.errors import ConfigError, DataError
from telezoom.series import WindowDataset, make_windows
from telezoom.storage import write_coarse_csv, write_json, write_records
from telezoom.utils.manifest import write_manifest

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def register(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="simulate traces and write dataset splits")
    add_override(parser, "--preset", "data.preset", help="generator preset name")
    add_override(parser, "--case", "data.case", choices=["queue", "link"], help="dataset case")
    add_override(parser, "--zoom", "data.zoom", type=int, help="zoom-in factor Z")
    add_override(parser, "--context-len", "data.context_len", type=int, help="coarse intervals per window")
    add_override(parser, "--stride", "data.stride", type=int, help="fine steps between window starts")
    add_override(parser, "--traces", "data.traces_per_config", type=int, help="traces per traffic config")
    add_override(parser, "--periodic-offset", "data.periodic_offset", type=int, help="periodic sample offset")
    add_override(parser, "--seed", "seed", type=int, help="master seed")
    parser.add_argument("--presets", help="traffic config file (preset format); defaults to the shipped presets")
    parser.add_argument("--ingest", help="wide CSV of fine-grained channels to window instead of simulating")
    parser.add_argument("--schema", help="ingestion schema for --ingest")
    parser.add_argument("--out", help="output directory")
    parser.set_defaults(handler=run)


def _contiguous_splits(windows, cfg: RunConfig, target: str, domain, granularity: float) -> DatasetSplits:
    n = len(windows)
    n_hold = max(1, int(round(0.1 * n))) if n >= 3 else 0
    n_train = n - 2 * n_hold
    if n_train < 1:
        raise DataError(f"Only {n} windows in the ingested file, need at least 1 for training")

    def split(chunk):
        chunk = [replace(ex, example_id=i) for i, ex in enumerate(chunk)]
        return WindowDataset(chunk, cfg.data.zoom, cfg.data.context_len, target, domain, granularity, "custom",
                             layout=windows[0].input.layout)

    return DatasetSplits(split(windows[:n_train]), split(windows[n_train:n_train + n_hold]),
                         split(windows[n_train + n_hold:]))


def ingest_splits(cfg: RunConfig, csv_path: str, schema_path: str) -> DatasetSplits:
    """Window an external CSV with the case's monitoring operators, split by position"""
    if not schema_path:
        raise ConfigError("--ingest needs --schema")
    channels = ingest_csv(csv_path, IngestSchema.load(schema_path))
    target = CASE_TARGETS[cfg.data.case]
    if target not in channels:
        raise DataError(f"Ingested file has no '{target}' channel for the {cfg.data.case} case")
    specs = [(ch, spec) for ch, spec in case_specs(cfg.data.case, cfg.data.zoom, cfg.data.periodic_offset)
             if ch in channels]
    span = cfg.data.zoom * cfg.data.context_len
    windows = make_windows(channels, specs, target, cfg.data.context_len, cfg.data.stride or span,
                           source=Path(csv_path).name)
    if not windows:
        raise DataError(f"{csv_path}: shorter than one {span}-step window")
    series = channels[target]
    return _contiguous_splits(windows, cfg, target, series.domain, series.granularity_ms)


def generate(
    cfg: RunConfig,
    out_dir: Path,
    *,
    presets_file: Optional[str] = None,
    ingest: Optional[str] = None,
    schema: Optional[str] = None,
    workers: Optional[int] = None,
) -> Dict[str, Path]:
    """Write {train,val,test}.jsonl, the test coarse table and the generator burst log"""
    data = cfg.data
    if ingest:
        splits = ingest_splits(cfg, ingest, schema)
        source = {"ingest": str(ingest)}
    else:
        preset = load_preset(data.preset, presets_file)
        splits = build_dataset(
            preset.configs, None, data.zoom, data.context_len,
            case=data.case, stride=data.stride, periodic_offset=data.periodic_offset,
            traces_per_config=data.traces_per_config, held_out=preset.held_out, seed=cfg.seed, workers=workers,
        )
        source = {"preset": data.preset}

    out_dir = Path(out_dir)
    paths = {}
    for name, ds in splits.items():
        paths[name] = write_records(out_dir / f"{name}.jsonl", ds, {"split": name, "seed": cfg.seed, **source})
    paths["coarse"] = write_coarse_csv(out_dir / "test_coarse.csv", splits.test)
    if splits.bursts:
        paths["bursts"] = write_json(out_dir / "bursts.json", {k: [list(b) for b in v] for k, v in splits.bursts.items()})
    return paths


def run(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = output_dir(args, cfg, "dataset")
    logger.info(f"🔄 Generating dataset into {out}")
    paths = generate(cfg, out, presets_file=args.presets, ingest=args.ingest, schema=args.schema)
    inputs = [p for p in (args.presets, args.ingest, args.schema) if p]
    write_manifest(out, "generate", cfg.to_dict(), inputs=inputs, outputs=paths.values(), args=args.replay)
    logger.info(f"✅ Dataset written to {out}")
    return 0
