"""
Utility functions shared by the pfsgld front ends.
"""

from pfsgld.utils.io_utils import (
    RunManifest,
    blob_hash,
    manifest_path,
    read_manifest,
    write_csv,
    write_manifest,
)
from pfsgld.utils.logging_utils import configure_logging
from pfsgld.utils.rng_utils import derived_seed

__all__ = [
    "RunManifest",
    "blob_hash",
    "manifest_path",
    "read_manifest",
    "write_csv",
    "write_manifest",
    "configure_logging",
    "derived_seed",
]
