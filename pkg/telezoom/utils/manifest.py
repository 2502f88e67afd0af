# -*- coding: utf-8 -*-
"""
🧾 Run Manifests
Hashes every input and output file so a run can be checked and replayed
"""

import hashlib
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

from telezoom.errors import ConfigError, DataError
from telezoom.storage import read_json, write_json

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
PathLike = Union[str, Path]


def sha256_file(path: PathLike, chunk_size: int = 1 << 20) -> str:
    """Hex SHA-256 of a file's bytes"""
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(chunk_size), b""):
                digest.update(chunk)
    except FileNotFoundError as e:
        raise DataError(f"Cannot hash missing file: {path}") from e
    return digest.hexdigest()


def hash_files(paths: Iterable[PathLike]) -> Dict[str, str]:
    return {str(p): sha256_file(p) for p in sorted({str(p) for p in paths})}


def write_manifest(
    out_dir: PathLike,
    command: str,
    resolved_config: Mapping[str, Any],
    *,
    inputs: Iterable[PathLike] = (),
    outputs: Iterable[PathLike] = (),
    args: Optional[Mapping[str, Any]] = None,
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    """
    Write manifest.json next to a command's outputs

    Args:
        command: sub-command name, used by --manifest to replay
        resolved_config: RunConfig.to_dict() after every override
        args: the remaining command arguments (paths, flags)
    """
    from telezoom import __version__

    body = {
        "command": command,
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "seed": resolved_config.get("seed"),
        "config": dict(resolved_config),
        "args": dict(args or {}),
        "inputs": hash_files(inputs),
        "outputs": hash_files(outputs),
    }
    body.update(extra or {})
    path = write_json(Path(out_dir) / MANIFEST_NAME, body)
    logger.info(f"✅ Manifest written: {path} ({len(body['outputs'])} outputs)")
    return path


def load_manifest(path: PathLike) -> Dict[str, Any]:
    body = read_json(path)
    for key in ("command", "config", "args"):
        if key not in body:
            raise ConfigError(f"{path}: manifest has no '{key}' entry")
    return body


def verify_inputs(manifest: Mapping[str, Any]) -> Dict[str, str]:
    """Inputs whose current hash differs from the recorded one, mapped to a reason"""
    changed = {}
    for path, recorded in manifest.get("inputs", {}).items():
        if not Path(path).exists():
            changed[path] = "missing"
        elif sha256_file(path) != recorded:
            changed[path] = "hash differs"
    for path, reason in changed.items():
        logger.warning(f"⚠️ Manifest input {path}: {reason}")
    return changed
