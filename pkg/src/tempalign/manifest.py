"""Per-stage manifests: input/output checksums, parameters, and seeds.

Every CLI stage writes a manifest next to its artifacts so a re-run with
identical inputs can be verified to produce identical bytes. Timing fields
live under "timing" and are excluded from any byte-identity comparison.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping, Optional, Union

from . import __version__
from .errors import DataError

PathLike = Union[str, Path]


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(
    stage: str,
    params: Mapping,
    inputs: Mapping[str, PathLike],
    outputs: Mapping[str, PathLike],
    timing: Optional[Mapping[str, float]] = None,
) -> dict:
    return {
        "stage": stage,
        "version": __version__,
        "params": dict(params),
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in inputs.items()},
        "outputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in outputs.items()},
        "timing": dict(timing) if timing else {},
    }


def write_manifest(manifest: Mapping, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def load_manifest(path: PathLike) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc


def check_inputs_unchanged(manifest: Mapping, stage: str) -> None:
    """Raise if any input recorded in a previous manifest changed on disk."""
    for name, entry in manifest.get("inputs", {}).items():
        path = entry["path"]
        if not Path(path).exists():
            raise DataError(f"{stage}: manifest input {name} missing at {path}")
        current = sha256_file(path)
        if current != entry["sha256"]:
            raise DataError(
                f"{stage}: manifest checksum mismatch for input {name} ({path}); "
                f"recorded {entry['sha256'][:12]}, found {current[:12]}"
            )
