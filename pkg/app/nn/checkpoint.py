"""Checkpoint directories: ``manifest.json`` plus a flat little-endian float32 ``weights.bin``.

Manifest tensor entries address the blob by ``offset`` and ``len``, both counted in
float32 values, in network declaration order.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from ..errors import CorruptCheckpoint, KeySetMismatch, VersionMismatch
from .network import NetworkConfig, parameter_layout
from .parameters import Parameters

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"
BLOB_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: Parameters
    best_validation_accuracy: float
    epoch_of_best: int
    format_version: int = FORMAT_VERSION


def save_checkpoint(checkpoint: Checkpoint, path: os.PathLike) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with (directory / WEIGHTS).open("wb") as f:
        for name, tensor in checkpoint.params.items():
            data = np.ascontiguousarray(tensor, dtype=BLOB_DTYPE)
            f.write(data.tobytes())
            entries.append({"name": name, "shape": list(tensor.shape), "offset": offset, "len": int(data.size)})
            offset += int(data.size)
    manifest = {
        "format_version": checkpoint.format_version,
        "config": checkpoint.config.model_dump(mode="json"),
        "tensors": entries,
        "best_validation_accuracy": checkpoint.best_validation_accuracy,
        "epoch_of_best": checkpoint.epoch_of_best,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    logger.info("Saved checkpoint with %d tensors to %s", len(entries), directory)
    return directory


def load_checkpoint(path: os.PathLike, expected_config: Optional[NetworkConfig] = None) -> Checkpoint:
    """
    Raises:
        CorruptCheckpoint: if the manifest or blob is missing, unreadable or truncated
        VersionMismatch: if the manifest has another format version
        KeySetMismatch: if the tensors do not match the key set of the stored
            (or ``expected_config``) network configuration
    """
    directory = Path(path)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
        blob = np.fromfile(directory / WEIGHTS, dtype=BLOB_DTYPE)
    except (OSError, ValueError) as e:
        raise CorruptCheckpoint(f"Cannot read checkpoint at {directory}: {e}") from e

    if not isinstance(manifest, dict) or "format_version" not in manifest:
        raise CorruptCheckpoint(f"{directory / MANIFEST} is not a checkpoint manifest")
    if manifest["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(f"Checkpoint format {manifest['format_version']}, expected {FORMAT_VERSION}")

    try:
        config = NetworkConfig.model_validate(manifest["config"])
        entries = manifest["tensors"]
        best_accuracy = float(manifest["best_validation_accuracy"])
        epoch_of_best = int(manifest["epoch_of_best"])
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise CorruptCheckpoint(f"Malformed checkpoint manifest: {e}") from e

    layout = parameter_layout(expected_config or config)
    expected = layout.declared
    stored = {entry["name"]: tuple(entry["shape"]) for entry in entries}
    if stored != expected:
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise KeySetMismatch(f"Checkpoint tensors do not match the network: missing {missing[:5]}, extra {extra[:5]}")

    params = Parameters(np.float32)
    for entry in entries:
        start, length = int(entry["offset"]), int(entry["len"])
        shape = tuple(entry["shape"])
        if start < 0 or start + length > blob.size or length != int(np.prod(shape, dtype=np.int64)):
            raise CorruptCheckpoint(f"Tensor {entry['name']} lies outside the weights blob (truncated file?)")
        values = blob[start : start + length].reshape(shape).astype(np.float32)
        params.add(entry["name"], values, layout.trainable[entry["name"]])
    total = sum(int(entry["len"]) for entry in entries)
    if total != blob.size:
        raise CorruptCheckpoint(f"Weights blob holds {blob.size} values, manifest addresses {total}")
    return Checkpoint(config, params, best_accuracy, epoch_of_best, FORMAT_VERSION)

