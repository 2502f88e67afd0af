# -*- coding: utf-8 -*-
"""
🗄️ Storage Module
Record files, CSV tables, checkpoints and sidecars, all written atomically
"""

import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd
import torch

from telezoom.errors import CheckpointError, DataError
from telezoom.series import (
    CoarseBundle,
    CoarseEntry,
    CoarsenerSpec,
    FineSeries,
    WindowDataset,
    WindowExample,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CHECKPOINT_MAGIC = "TELEZOOM-CKPT"
CHECKPOINT_VERSION = 1

PathLike = Union[str, Path]


# ═══════════════════════════════════════════════════════════════
# ✍️ ATOMIC WRITES
# ═══════════════════════════════════════════════════════════════

def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write to a temp file in the target directory, then os.replace"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        logger.error(f"❌ Cannot write {path}: {e}")
        raise DataError(f"Cannot write {path}: {e}") from e
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, obj: Any) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: PathLike) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise DataError(f"File not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}") from e


def write_frame(path: PathLike, frame: pd.DataFrame) -> Path:
    """CSV table without index, LF line endings"""
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def save_figure(path: PathLike, fig) -> Path:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=120, bbox_inches="tight")
    return atomic_write_bytes(path, buffer.getvalue())


# ═══════════════════════════════════════════════════════════════
# 📜 WINDOW RECORD FILES
# ═══════════════════════════════════════════════════════════════

def dataset_header(ds: WindowDataset, extra: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    specs = []
    if ds.examples:
        specs = [
            {"channel": e.channel, "kind": e.spec.kind.value, "offset": e.spec.offset}
            for e in ds.examples[0].input.entries
        ]
    header = {
        "record": "header",
        "format_version": FORMAT_VERSION,
        "granularity_ms": ds.granularity_ms,
        "zoom": ds.zoom,
        "context_len": ds.context_len,
        "target": ds.target,
        "domain": ds.domain.value,
        "layout": list(ds.layout),
        "specs": specs,
        "case": ds.case,
    }
    header.update(extra or {})
    return header


def _values(series: Optional[FineSeries]):
    return None if series is None else series.values.tolist()


def example_record(ex: WindowExample) -> Dict[str, Any]:
    record = {
        "id": ex.example_id,
        "source": ex.source,
        "start": ex.start,
        "setting": ex.setting,
        "entries": {e.name: e.values.tolist() for e in ex.input.entries},
        "scalars": {k: float(v) for k, v in ex.scalars.items()},
    }
    if ex.target is not None:
        record["target"] = _values(ex.target)
    if ex.class_targets:
        record["class_targets"] = [_values(t) for t in ex.class_targets]
    return record


def dumps_records(ds: WindowDataset, extra_header: Optional[Mapping[str, Any]] = None) -> str:
    lines = [json.dumps(dataset_header(ds, extra_header), sort_keys=True)]
    lines.extend(json.dumps(example_record(ex), sort_keys=True) for ex in ds.examples)
    return "\n".join(lines) + "\n"


def write_records(path: PathLike, ds: WindowDataset, extra_header: Optional[Mapping[str, Any]] = None) -> Path:
    """Header line then one JSON object per window; same input, same bytes"""
    out = atomic_write_text(path, dumps_records(ds, extra_header))
    logger.info(f"✅ Wrote {len(ds)} windows to {out}")
    return out


def read_header(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
    except FileNotFoundError as e:
        raise DataError(f"Record file not found: {path}") from e
    if not first.strip():
        raise DataError(f"{path}: empty record file")
    try:
        header = json.loads(first)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:1: bad header record: {e}") from e
    if header.get("record") != "header":
        raise DataError(f"{path}:1: first record must be the header")
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported record format version {header.get('format_version')}")
    return header


def read_records(path: PathLike) -> Tuple[WindowDataset, Dict[str, Any]]:
    """Parse a record file back into a WindowDataset plus its header"""
    path = Path(path)
    header = read_header(path)
    zoom, context_len = int(header["zoom"]), int(header["context_len"])
    granularity = float(header["granularity_ms"])
    domain = header["domain"]
    specs = [(s["channel"], CoarsenerSpec(s["kind"], zoom, int(s.get("offset", 0)))) for s in header["specs"]]

    def series(values):
        return FineSeries(header["target"], values, granularity, domain)

    examples = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entries = tuple(
                    CoarseEntry(channel, spec, rec["entries"][f"{spec.kind.value}_{channel}"])
                    for channel, spec in specs
                )
                examples.append(WindowExample(
                    example_id=int(rec["id"]),
                    input=CoarseBundle(entries, context_len, zoom),
                    target=series(rec["target"]) if rec.get("target") is not None else None,
                    scalars=dict(rec.get("scalars", {})),
                    source=rec.get("source", ""),
                    start=int(rec.get("start", 0)),
                    class_targets=tuple(series(t) for t in rec.get("class_targets", [])),
                    setting=rec.get("setting", "seen"),
                ))
            except (KeyError, ValueError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: bad window record: {e}") from e

    ds = WindowDataset(examples, zoom, context_len, header["target"], domain, granularity,
                       header.get("case", "custom"), layout=list(header["layout"]))
    logger.info(f"✅ Read {len(ds)} windows from {path}")
    return ds, header


def write_coarse_csv(path: PathLike, ds: WindowDataset) -> Path:
    """Wide coarse table: one row per (window, interval), one column per measurement"""
    rows = []
    for ex in ds.examples:
        matrix = ex.input.as_matrix(ds.layout)
        for k in range(ds.context_len):
            row = {"id": ex.example_id, "interval": k}
            row.update({name: matrix[k, j] for j, name in enumerate(ds.layout)})
            rows.append(row)
    frame = pd.DataFrame(rows, columns=["id", "interval", *ds.layout])
    body = frame.to_csv(index=False, lineterminator="\n")
    return atomic_write_text(path, f"# granularity_ms={ds.granularity_ms!r} zoom={ds.zoom}\n{body}")


# ═══════════════════════════════════════════════════════════════
# 💾 CHECKPOINTS
# ═══════════════════════════════════════════════════════════════

def save_checkpoint(path: PathLike, payload: Mapping[str, Any]) -> Path:
    """torch.save under a magic header; payload must be weights_only-loadable"""
    buffer = io.BytesIO()
    torch.save({"magic": CHECKPOINT_MAGIC, "version": CHECKPOINT_VERSION, **payload}, buffer)
    out = atomic_write_bytes(path, buffer.getvalue())
    logger.info(f"✅ Checkpoint saved: {out}")
    return out


def load_checkpoint(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"{path} is not a telezoom checkpoint: {e}") from e
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a telezoom checkpoint (bad magic)")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has checkpoint version {payload.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    return payload


# ═══════════════════════════════════════════════════════════════
# 🧩 REFINEMENT SIDECAR
# ═══════════════════════════════════════════════════════════════

def write_class_sidecar(path: PathLike, groups: Sequence[Sequence[int]], meta: Mapping[str, Any]) -> Path:
    body = dict(meta)
    body["classes"] = [sorted(int(i) for i in g) for g in groups]
    return write_json(path, body)


def read_class_sidecar(path: PathLike) -> List[List[int]]:
    body = read_json(path)
    return [list(map(int, g)) for g in body.get("classes", [])]
