# -*- coding: utf-8 -*-
"""
Shared Utilities
"""

from .workers import run_pool

from .manifest import (
    MANIFEST_NAME,
    sha256_file,
    hash_files,
    write_manifest,
    load_manifest,
    verify_inputs
)

__all__ = [
    'run_pool',
    'MANIFEST_NAME',
    'sha256_file',
    'hash_files',
    'write_manifest',
    'load_manifest',
    'verify_inputs'
]
