import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field, ValidationError

from pfsgld import __version__
from pfsgld.exceptions import DataError

PathLike = Union[str, Path]


class RunManifest(BaseModel):
    """Provenance of one output file."""

    command: str
    version: str = __version__
    seed: Optional[int] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    created_at: Optional[str] = None
    wall_time_s: Optional[float] = None


def blob_hash(path: PathLike) -> str:
    """
    Git-style content hash of a file.

    Args:
        path: File to hash

    Returns:
        str: sha1 of b"blob <size>\\0" + content, as git computes object ids
    """
    path = Path(path)
    try:
        content = path.read_bytes()
    except FileNotFoundError as e:
        raise DataError("input file not found", path=str(path)) from e
    header = f"blob {len(content)}\0".encode()
    return hashlib.sha1(header + content).hexdigest()


def manifest_path(output: PathLike) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def write_manifest(manifest: RunManifest, output: PathLike, record_timing: bool = True) -> Path:
    """
    Write `<output>.manifest.json` next to an artifact.

    Args:
        manifest: Provenance record
        output: Artifact path the manifest describes
        record_timing: Add a creation timestamp (omitted for byte-exact reruns)

    Returns:
        Path: Manifest path
    """
    if record_timing and manifest.created_at is None:
        manifest = manifest.model_copy(update={"created_at": datetime.now(timezone.utc).isoformat()})
    if not record_timing:
        manifest = manifest.model_copy(update={"created_at": None, "wall_time_s": None})
    path = manifest_path(output)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = manifest.model_dump(mode="json")
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    logger.info("Wrote manifest {}", path)
    return path


def read_manifest(output: PathLike) -> RunManifest:
    """Manifest of an artifact (pass the artifact path, not the manifest path)."""
    path = manifest_path(output)
    try:
        return RunManifest.model_validate_json(path.read_text())
    except FileNotFoundError as e:
        raise DataError("manifest not found", path=str(path)) from e
    except ValidationError as e:
        raise DataError(f"invalid manifest: {e}", path=str(path)) from e


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """Full-precision CSV, round-trip safe for doubles."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote {} rows to {}", len(frame), path)
    return path
